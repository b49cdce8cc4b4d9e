"""
Dyadic (Littlewood-Paley) frequency analysis on the periodic grid.

Band ``k`` of the sharp filter keeps the modes with ``2**(k-1) < |xi| <= 2**k``.
The smooth filter uses ``cos(pi*s/2)**2`` of ``s = log2|xi| - k`` on ``|s| <= 1``,
which sums to one wherever two neighbouring bands overlap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .spectral import (FlowState, SpectralGrid, l2_norm_spectral, lp_norm_physical,
                       to_physical, tri_weights)

FILTERS = ("sharp", "smooth")


class BandRangeError(ValueError):
    pass


def band_of(kmag):
    """Sharp band index of a positive radius (vectorised)."""
    kmag = np.asarray(kmag, dtype=float)
    return np.ceil(np.log2(kmag) - 1e-12).astype(int)


@lru_cache(maxsize=32)
def _band_index(grid: SpectralGrid) -> np.ndarray:
    out = np.full(grid.spec_shape, np.iinfo(np.int64).min, dtype=np.int64)
    pos = grid.k2 > 0
    out[pos] = band_of(np.sqrt(grid.k2[pos]))
    return out


@dataclass(frozen=True, eq=False)
class DyadicConfig:
    """Band range and split threshold for one grid.

    ``k_lo`` is the band of the smallest lattice radius and ``k_hi`` the band of the
    largest one, so the sharp blocks partition every nonzero mode.
    """

    grid: SpectralGrid
    k0: int
    k_lo: int
    k_hi: int
    filter: str = "sharp"

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if not self.k_lo <= self.k0 <= self.k_hi:
            raise BandRangeError(f"need k_lo <= k0 <= k_hi, got {self.k_lo}, {self.k0}, {self.k_hi}")

    @classmethod
    def for_grid(cls, grid: SpectralGrid, k0: Optional[int] = None,
                 filter: str = "sharp") -> "DyadicConfig":
        kmax = float(np.sqrt(grid.k2.max()))
        if filter == "sharp":
            k_lo, k_hi = int(band_of(grid.k_min)), int(band_of(kmax))
        else:
            k_lo = math.floor(math.log2(grid.k_min) + 1e-12)
            k_hi = math.ceil(math.log2(kmax) - 1e-12)
        if k0 is None:
            k0 = max(k_lo, k_hi - 3)
        return cls(grid, int(k0), k_lo, k_hi, filter)

    @property
    def bands(self) -> range:
        return range(self.k_lo, self.k_hi + 1)

    @property
    def low_bands(self) -> range:
        return range(self.k_lo, self.k0 + 1)

    @property
    def high_bands(self) -> range:
        return range(max(self.k0 - 1, self.k_lo), self.k_hi + 1)

    def check_band(self, k: int) -> None:
        if not self.k_lo <= k <= self.k_hi:
            raise BandRangeError(f"band {k} outside resolvable range [{self.k_lo}, {self.k_hi}]")

    def weights(self, k: int) -> np.ndarray:
        """Filter weight of band ``k`` on the spectral lattice."""
        self.check_band(k)
        g = self.grid
        if self.filter == "sharp":
            return (_band_index(g) == k).astype(float)
        pos = g.k2 > 0
        s = np.zeros(g.spec_shape)
        s[pos] = 0.5 * np.log2(g.k2[pos]) - k
        w = np.where(pos & (np.abs(s) <= 1.0), np.cos(0.5 * np.pi * s) ** 2, 0.0)
        return w


def dyadic_block(field: np.ndarray, k: int, cfg: DyadicConfig) -> np.ndarray:
    return field * cfg.weights(k)


def band_norm(field: np.ndarray, k: int, cfg: DyadicConfig, p: float = 2.0,
              weights=None) -> float:
    """``||Delta_k f||_{L^p}``; spectral for p=2, physical quadrature otherwise."""
    blk = dyadic_block(field, k, cfg)
    if p == 2:
        return l2_norm_spectral(cfg.grid, blk, weights)
    return lp_norm_physical(cfg.grid, to_physical(cfg.grid, blk), p, weights)


def band_table(field: np.ndarray, cfg: DyadicConfig, p: float = 2.0, weights=None,
               bands: Optional[Iterable[int]] = None) -> dict[int, float]:
    ks = cfg.bands if bands is None else bands
    if p == 2 and cfg.filter == "sharp":
        return _sharp_l2_table(field, cfg, weights, ks)
    return {int(k): band_norm(field, k, cfg, p, weights) for k in ks}


def _sharp_l2_table(field, cfg: DyadicConfig, weights, ks) -> dict[int, float]:
    g = cfg.grid
    e = np.abs(field) ** 2
    if weights is not None:
        e = e * np.reshape(weights, (-1,) + (1,) * g.dim)
    if e.ndim > g.dim:
        e = e.sum(axis=tuple(range(e.ndim - g.dim)))
    e = e * g.hermitian_weight
    idx = _band_index(g)
    pos = idx > np.iinfo(np.int64).min
    sums = np.bincount(idx[pos] - cfg.k_lo, weights=e[pos],
                       minlength=cfg.k_hi - cfg.k_lo + 1)
    out = {}
    for k in ks:
        cfg.check_band(k)
        out[int(k)] = float(np.sqrt(g.volume * sums[k - cfg.k_lo]))
    return out


def assemble(table: dict[int, float], s: float, r: float,
             bands: Optional[Iterable[int]] = None) -> float:
    """``l^r`` assembly of ``2**(k*s) * table[k]`` over the selected bands."""
    ks = list(table) if bands is None else [k for k in bands if k in table]
    vals = np.array([2.0 ** (k * s) * table[k] for k in ks])
    if vals.size == 0:
        return 0.0
    if np.isinf(r):
        return float(vals.max())
    return float(np.sum(vals ** r) ** (1.0 / r))


@dataclass
class BesovReport:
    s: float
    p: float
    r: float
    value: float
    low_value: float
    high_value: float
    k0: int
    band_norms: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"s": self.s, "p": self.p, "r": self.r, "value": self.value,
                "low_value": self.low_value, "high_value": self.high_value, "k0": self.k0,
                "bands": [{"k": k, "norm": v} for k, v in sorted(self.band_norms.items())]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def besov_norm(field: np.ndarray, s: float, p: float, r: float, cfg: DyadicConfig,
               weights=None) -> BesovReport:
    if len(cfg.bands) == 0:
        raise BandRangeError("empty resolvable band range")
    table = band_table(field, cfg, p, weights)
    return BesovReport(s, p, r, assemble(table, s, r), assemble(table, s, r, cfg.low_bands),
                       assemble(table, s, r, cfg.high_bands), cfg.k0, table)


def split_low_high(field: np.ndarray, cfg: DyadicConfig) -> tuple[np.ndarray, np.ndarray]:
    """Low part sums bands ``k <= k0``; high part sums bands ``k >= k0 - 1``."""
    low = sum(cfg.weights(k) for k in cfg.low_bands)
    high = sum(cfg.weights(k) for k in cfg.high_bands)
    return field * low, field * high


# --------------------------------------------------------------------------- state norms

def state_band_table(state: FlowState, cfg: DyadicConfig, p: float = 2.0,
                     bands: Optional[Iterable[int]] = None) -> tuple[dict, dict]:
    """Band norms of velocity and stress separately."""
    tw = tri_weights(state.dim)
    return (band_table(state.u_hat, cfg, p, None, bands),
            band_table(state.tau_hat, cfg, p, tw, bands))


def pair_table(state: FlowState, cfg: DyadicConfig, p: float = 2.0,
               bands: Optional[Iterable[int]] = None) -> dict[int, float]:
    """``||Delta_k u|| + ||Delta_k tau||`` per band."""
    tu, tt = state_band_table(state, cfg, p, bands)
    return {k: tu[k] + tt[k] for k in tu}


def low_norm(state: FlowState, s: float, cfg: DyadicConfig, r: float = 1.0) -> float:
    """``||(u, tau)^low||`` in the ``B^s_{2,r}`` scale."""
    return assemble(pair_table(state, cfg, 2.0, cfg.low_bands), s, r)


def high_norm(state: FlowState, s: float, p: float, cfg: DyadicConfig) -> float:
    return assemble(pair_table(state, cfg, p, cfg.high_bands), s, 1.0)


def hybrid_norm(state: FlowState, sigma: float, cfg: DyadicConfig, p: float = 2.0) -> float:
    """Low ``B^sigma_{2,1}`` plus high ``B^{d/p+1}_{p,1}`` of the pair ``(u, tau)``."""
    d = state.dim
    if sigma > d / 2:
        raise ValueError(f"sigma={sigma} exceeds d/2={d / 2}")
    return low_norm(state, sigma, cfg) + high_norm(state, d / p + 1, p, cfg)


def initial_energy(state: FlowState, cfg: DyadicConfig, p: float = 2.0) -> float:
    """``||(u,tau)^low||_{B^{d/2-1}_{2,1}} + ||u^high||_{B^{d/p+1}_{p,1}} + ||tau^high||_{B^{d/p}_{p,1}}``."""
    d = state.dim
    tu, tt = state_band_table(state, cfg, p, cfg.high_bands)
    return (low_norm(state, d / 2 - 1, cfg) + assemble(tu, d / p + 1, 1.0)
            + assemble(tt, d / p, 1.0))


def _times(series) -> np.ndarray:
    return np.array([s.time for s in series], dtype=float)


def chemin_lerner(series: Sequence[FlowState], rho: float, s: float, p: float,
                  cfg: DyadicConfig, part: str = "all", component: str = "pair") -> float:
    """Discrete Chemin-Lerner norm over saved snapshots.

    Per band, the time ``L^rho`` norm is taken first (max for ``rho=inf``, trapezoid for
    ``rho=1``), then bands are summed with weights ``2**(k*s)``.
    """
    if rho not in (1, np.inf):
        raise ValueError(f"rho must be 1 or inf, got {rho}")
    bands = {"all": cfg.bands, "low": cfg.low_bands, "high": cfg.high_bands}[part]
    rows = []
    for st in series:
        tu, tt = state_band_table(st, cfg, p, bands)
        pick = {"pair": lambda k: tu[k] + tt[k], "u": lambda k: tu[k], "tau": lambda k: tt[k]}
        rows.append([pick[component](k) for k in bands])
    arr = np.array(rows)
    if arr.size == 0:
        return 0.0
    if rho == np.inf:
        per_band = arr.max(axis=0)
    else:
        if len(series) < 2:
            raise ValueError("time integral needs at least 2 snapshots")
        per_band = trapezoid(arr, _times(series), axis=0)
    return float(sum(2.0 ** (k * s) * v for k, v in zip(bands, per_band)))


@dataclass
class EnergyPieces:
    low: float
    high: float

    @property
    def total(self) -> float:
        return self.low + self.high

    def __iter__(self):
        return iter((self.low, self.high, self.total))


def energy_functional(series: Sequence[FlowState], cfg: DyadicConfig,
                      p: float = 2.0) -> EnergyPieces:
    """Energy functional of a snapshot series up to its last time.

    Time integrals are omitted when only one snapshot is given.
    """
    if len(series) == 0:
        raise ValueError("empty series")
    d = cfg.grid.dim
    low = chemin_lerner(series, np.inf, d / 2 - 1, 2.0, cfg, "low")
    high = (chemin_lerner(series, np.inf, d / p + 1, p, cfg, "high", "u")
            + chemin_lerner(series, np.inf, d / p, p, cfg, "high", "tau"))
    if len(series) >= 2:
        low += chemin_lerner(series, 1, d / 2 + 1, 2.0, cfg, "low")
        high += (chemin_lerner(series, 1, d / p + 1, p, cfg, "high", "u")
                 + chemin_lerner(series, 1, d / p + 2, p, cfg, "high", "tau"))
    return EnergyPieces(low, high)


def energy_history(series: Sequence[FlowState], cfg: DyadicConfig,
                   p: float = 2.0) -> np.ndarray:
    """``E(t_n)`` at every snapshot, computed incrementally from band tables."""
    d = cfg.grid.dim
    lows, hu, ht = [], [], []
    for st in series:
        lt = pair_table(st, cfg, 2.0, cfg.low_bands)
        tu, tt = state_band_table(st, cfg, p, cfg.high_bands)
        lows.append([lt[k] for k in cfg.low_bands])
        hu.append([tu[k] for k in cfg.high_bands])
        ht.append([tt[k] for k in cfg.high_bands])
    return energy_from_tables(_times(series), np.array(lows), np.array(hu), np.array(ht),
                              cfg, d, p)


def energy_from_tables(t, lows, hu, ht, cfg: DyadicConfig, d: int, p: float) -> np.ndarray:
    """Running energy functional from per-snapshot band tables.

    ``lows``: (T, low bands) L^2 pair norms; ``hu``/``ht``: (T, high bands) L^p norms.
    """
    kl = np.array(list(cfg.low_bands), float)
    kh = np.array(list(cfg.high_bands), float)

    def running(arr, ks, s_sup, s_int):
        sup = np.maximum.accumulate(arr, axis=0) @ (2.0 ** (ks * s_sup))
        wint = arr @ (2.0 ** (ks * s_int))
        integ = np.concatenate([[0.0], np.cumsum(0.5 * (wint[1:] + wint[:-1]) * np.diff(t))])
        return sup + integ

    return (running(lows, kl, d / 2 - 1, d / 2 + 1)
            + running(hu, kh, d / p + 1, d / p + 1)
            + running(ht, kh, d / p, d / p + 2))


# --------------------------------------------------------------------------- class detector

@dataclass
class MembershipReport:
    sigma1: float
    sup_bound: float
    ring_hits: list[int]
    M0: float
    M: int
    in_class: bool
    band_range: tuple[int, int]
    weighted: dict[int, float] = field(default_factory=dict)
    truncated: bool = True

    def to_dict(self) -> dict:
        return {"sigma1": self.sigma1, "sup_bound": self.sup_bound,
                "ring_hits": self.ring_hits, "M0": self.M0, "M": self.M,
                "in_class": self.in_class, "band_range": list(self.band_range),
                "truncated": self.truncated}


def membership_from_weighted(weighted: dict[int, float], sigma1: float, M0: float, M: int,
                             k_lo: int, k_top: int) -> MembershipReport:
    """Class verdict from weighted band norms ``2**(sigma1*k) ||Delta_k f||``.

    Hits must start within ``M`` of ``k_lo``, reach within ``M`` of ``k_top`` and have
    consecutive gaps at most ``M``.
    """
    if k_top < k_lo:
        raise BandRangeError("empty low-frequency range")
    vals = [weighted[k] for k in range(k_lo, k_top + 1)]
    sup = float(max(vals))
    # relative slack absorbs rounding in data normalized exactly to M0
    hits = [k for k in range(k_lo, k_top + 1) if weighted[k] >= M0 * (1 - 1e-12) and weighted[k] > 0]
    ok = bool(hits) and np.isfinite(sup) and M0 > 0
    if ok:
        gaps = np.diff(hits) if len(hits) > 1 else np.array([0])
        ok = hits[0] - k_lo <= M and k_top - hits[-1] <= M and int(gaps.max()) <= M
    return MembershipReport(sigma1, sup, hits, M0, M, bool(ok), (k_lo, k_top),
                            {k: weighted[k] for k in range(k_lo, k_top + 1)})


def b_class_check(field: np.ndarray, sigma1: float, M0: float, M: int, cfg: DyadicConfig,
                  weights=None) -> MembershipReport:
    """Truncated lower-bound class detector on the resolvable low bands."""
    table = band_table(field, cfg, 2.0, weights, cfg.low_bands)
    weighted = {k: 2.0 ** (sigma1 * k) * v for k, v in table.items()}
    return membership_from_weighted(weighted, sigma1, M0, M, cfg.k_lo, cfg.k0)
