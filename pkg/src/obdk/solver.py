"""
Pseudospectral integration of the full nonlinear system

    d/dt u + u.grad u + grad P = nu1 div tau,
    d/dt tau + u.grad tau - eta Lap tau + Q(tau, grad u) = nu2 D(u),
    Q = tau Omega - Omega tau + b (D tau + tau D).

Two schemes are provided.  ``etd-rk2`` is the second-order exponential
Runge-Kutta method of Cox and Matthews, with the linear group and its
phi-functions evaluated exactly per mode in the ``(u, Z, tau - S(Z))`` block
variables.  ``rk4-full`` is explicit classical RK4 on the whole right-hand side.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import exprel

from .linear import (multipliers, potential_stress, propagate_state_closed, z_of_stress)
from .littlewood_paley import DyadicConfig, energy_from_tables, initial_energy, pair_table, \
    state_band_table
from .spectral import (FlowState, ModelParams, SpectralGrid, divergence_residual, full_to_sym,
                       leray_project, ntri, sym_to_full, to_physical, to_spectral, tri_pairs)

log = logging.getLogger(__name__)

SCHEMES = ("etd-rk2", "rk4-full")


class BlowUpError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    dt: float
    t_end: float
    params: ModelParams
    scheme: str = "etd-rk2"
    snapshot_times: Sequence[float] = ()
    dealias: bool = True
    cfg: Optional[DyadicConfig] = None
    gate_nonlinear: bool = False
    blowup_factor: float = 100.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        ts = list(self.snapshot_times)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("snapshot_times must be strictly increasing")
        if ts and (ts[0] < 0 or ts[-1] > self.t_end + 1e-12):
            raise ValueError("snapshot_times must lie in [0, t_end]")

    def check_stability(self, grid: SpectralGrid) -> None:
        if self.scheme != "rk4-full":
            return
        k2 = grid.max_k2(self.dealias)
        c = self.dt * self.params.eta * k2
        if c > 0.5:
            raise ValueError(f"rk4-full stability: dt*eta*k2max = {c:.3g} > 0.5")


# --------------------------------------------------------------------------- nonlinear terms

def q_bilinear(tau: np.ndarray, grad_u: np.ndarray, q_slip: float) -> np.ndarray:
    """``tau Omega - Omega tau + b (D tau + tau D)`` for full (d, d, ...) arrays."""
    D = 0.5 * (grad_u + np.swapaxes(grad_u, 0, 1))
    Om = 0.5 * (grad_u - np.swapaxes(grad_u, 0, 1))
    mm = lambda a, b: np.einsum("ik...,kj...->ij...", a, b)
    return mm(tau, Om) - mm(Om, tau) + q_slip * (mm(D, tau) + mm(tau, D))


def _physical_gradients(grid: SpectralGrid, f_hat: np.ndarray) -> np.ndarray:
    """``d_j f^c`` in physical space, shape (ncomp, d, *shape)."""
    xi = grid.xi
    stack = np.stack([np.stack([1j * xi[j] * f_hat[c] for j in range(grid.dim)])
                      for c in range(f_hat.shape[0])])
    return to_physical(grid, stack)


def nonlinear_rhs(state: FlowState, params: ModelParams,
                  dealias: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``F = -P(u.grad u)`` and ``H = -u.grad tau - Q(tau, grad u)`` (spectral).

    Products are formed in physical space in convective form; the result is truncated
    to the dealiased set (or only Nyquist-cleaned when ``dealias`` is false).
    """
    g = state.grid
    d = g.dim
    u = to_physical(g, state.u_hat)
    gu = _physical_gradients(g, state.u_hat)            # (d, d, ...) = d_j u^i
    tau_s = to_physical(g, state.tau_hat)
    gt = _physical_gradients(g, state.tau_hat)          # (ntri, d, ...)
    adv_u = np.einsum("j...,ij...->i...", u, gu)
    adv_t = np.einsum("j...,cj...->c...", u, gt)
    q = full_to_sym(q_bilinear(sym_to_full(tau_s, d), gu, params.q_slip), d)
    mask = g.dealias_mask if dealias else g.nyquist_free
    F = -leray_project(g, to_spectral(g, adv_u)) * mask
    H = -to_spectral(g, adv_t + q) * mask
    F[(slice(None),) + (0,) * d] = 0
    return F, H


# --------------------------------------------------------------------------- ETD machinery

def _phi_scalar(z: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """``h phi1(z)`` and ``h phi2(z)`` with ``phi1 = (e^z-1)/z``, ``phi2 = (e^z-1-z)/z^2``."""
    p1 = exprel(z)
    small = np.abs(z) < 0.1
    zs = np.where(small, 1.0, z)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        p2 = (p1 - 1.0) / zs
    ser, term = np.zeros_like(z), np.ones_like(z) / 2.0
    for j in range(12):
        ser = ser + term
        term = term * z / (j + 3)
    return h * p1, h * np.where(small, ser, p2)


@dataclass
class _Block:
    """Per-mode 2x2 matrices stored entrywise: (m11, m12, m21, m22)."""
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def apply(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.a * x + self.b * y, self.c * x + self.d * y

    def __matmul__(self, o: "_Block") -> "_Block":
        return _Block(self.a * o.a + self.b * o.c, self.a * o.b + self.b * o.d,
                      self.c * o.a + self.d * o.c, self.c * o.b + self.d * o.d)


class EtdCoefficients:
    """Exact ``G(h)``, ``h phi1(hM)`` and ``h phi2(hM)`` for the ``(u, Z)`` block and the
    heat remainder.  A truncated Taylor series is used where ``|hM|`` is small."""

    SERIES_RADIUS = 0.1
    SERIES_TERMS = 14

    def __init__(self, grid: SpectralGrid, h: float, params: ModelParams):
        k = grid.kmag
        k2 = grid.k2
        nu1, nu2, eta = params.nu1, params.nu2, params.eta
        m = multipliers(h, k, params)
        I = _Block(np.ones_like(k), np.zeros_like(k), np.zeros_like(k), np.ones_like(k))
        self.G = _Block(m.A, nu1 * m.B, -0.5 * nu2 * m.B, -m.C)
        det = 0.5 * nu1 * nu2 * k2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = np.where(det > 0, 1.0 / np.where(det > 0, det, 1.0), 0.0)
        Minv = _Block(-eta * k2 * inv_det, -nu1 * k * inv_det, 0.5 * nu2 * k * inv_det,
                      np.zeros_like(k))
        GmI = _Block(self.G.a - 1.0, self.G.b, self.G.c, self.G.d - 1.0)
        P1 = Minv @ GmI
        P1h = _Block(P1.a / h - 1.0, P1.b / h, P1.c / h, P1.d / h - 1.0)
        P2 = Minv @ P1h

        hM = _Block(np.zeros_like(k), h * nu1 * k, -0.5 * h * nu2 * k, -h * eta * k2)
        radius = np.abs(hM.b) + np.abs(hM.c) + np.abs(hM.d)
        small = radius < self.SERIES_RADIUS
        S1 = _Block(np.zeros_like(k), np.zeros_like(k), np.zeros_like(k), np.zeros_like(k))
        S2 = _Block(*(np.zeros_like(k) for _ in range(4)))
        pw = I
        fact = 1.0
        for j in range(self.SERIES_TERMS):
            f1 = 1.0 / math.factorial(j + 1)
            f2 = 1.0 / math.factorial(j + 2)
            S1 = _Block(S1.a + f1 * pw.a, S1.b + f1 * pw.b, S1.c + f1 * pw.c, S1.d + f1 * pw.d)
            S2 = _Block(S2.a + f2 * pw.a, S2.b + f2 * pw.b, S2.c + f2 * pw.c, S2.d + f2 * pw.d)
            pw = pw @ hM
        pick = lambda s, e: np.where(small, h * s, e)
        self.P1 = _Block(pick(S1.a, P1.a), pick(S1.b, P1.b), pick(S1.c, P1.c), pick(S1.d, P1.d))
        self.P2 = _Block(pick(S2.a, P2.a), pick(S2.b, P2.b), pick(S2.c, P2.c), pick(S2.d, P2.d))
        self.heat = m.heat
        self.r1, self.r2 = _phi_scalar(-eta * k2 * h, h)


@dataclass
class _Blocks:
    u: np.ndarray
    Z: np.ndarray
    R: np.ndarray


def _to_blocks(grid: SpectralGrid, u: np.ndarray, tau: np.ndarray) -> _Blocks:
    xi = grid.xi_vec
    Z = z_of_stress(xi, tau)
    return _Blocks(u, Z, tau - potential_stress(xi, Z))


def _from_blocks(grid: SpectralGrid, b: _Blocks) -> tuple[np.ndarray, np.ndarray]:
    return b.u, b.R + potential_stress(grid.xi_vec, b.Z)


class Stepper:
    """Single-step integrator bound to one grid, time step and configuration."""

    def __init__(self, grid: SpectralGrid, config: SolverConfig):
        config.check_stability(grid)
        self.grid = grid
        self.config = config
        self.params = config.params
        self._coef: dict[float, EtdCoefficients] = {}

    def coefficients(self, h: float) -> EtdCoefficients:
        key = round(h, 15)
        if key not in self._coef:
            self._coef[key] = EtdCoefficients(self.grid, h, self.params)
        return self._coef[key]

    def rhs_nl(self, u, tau):
        g = self.grid
        if self.config.gate_nonlinear:
            return np.zeros_like(u), np.zeros_like(tau)
        return nonlinear_rhs(FlowState(g, 0.0, u, tau), self.params, self.config.dealias)

    def rhs_linear(self, u, tau):
        g, p = self.grid, self.params
        tf = sym_to_full(tau, g.dim)
        divt = np.stack([sum(1j * g.xi[j] * tf[i, j] for j in range(g.dim))
                         for i in range(g.dim)])
        du = p.nu1 * leray_project(g, divt)
        Du = np.stack([0.5j * (g.xi[b] * u[a] + g.xi[a] * u[b]) for a, b in tri_pairs(g.dim)])
        dt_ = -p.eta * g.k2 * tau + p.nu2 * Du
        return du, dt_

    def step(self, u, tau, h):
        if self.config.scheme == "etd-rk2":
            return self._etd2(u, tau, h)
        return self._rk4(u, tau, h)

    def _etd2(self, u, tau, h):
        g = self.grid
        c = self.coefficients(h)
        x = _to_blocks(g, u, tau)
        F, H = self.rhs_nl(u, tau)
        n = _to_blocks(g, F, H)
        ga_u, ga_Z = c.G.apply(x.u, x.Z)
        p1u, p1Z = c.P1.apply(n.u, n.Z)
        a = _Blocks(ga_u + p1u, ga_Z + p1Z, c.heat * x.R + c.r1 * n.R)
        a.u = leray_project(g, a.u)
        ua, ta = _from_blocks(g, a)
        Fa, Ha = self.rhs_nl(ua, ta)
        na = _to_blocks(g, Fa, Ha)
        du, dZ = c.P2.apply(na.u - n.u, na.Z - n.Z)
        out = _Blocks(leray_project(g, a.u + du), a.Z + dZ, a.R + c.r2 * (na.R - n.R))
        return _from_blocks(g, out)

    def _full_rhs(self, u, tau):
        lu, lt = self.rhs_linear(u, tau)
        F, H = self.rhs_nl(u, tau)
        return lu + F, lt + H

    def _rk4(self, u, tau, h):
        g = self.grid
        P = lambda v: leray_project(g, v)
        k1u, k1t = self._full_rhs(u, tau)
        u2 = P(u + 0.5 * h * k1u)
        k2u, k2t = self._full_rhs(u2, tau + 0.5 * h * k1t)
        u3 = P(u + 0.5 * h * k2u)
        k3u, k3t = self._full_rhs(u3, tau + 0.5 * h * k2t)
        u4 = P(u + h * k3u)
        k4u, k4t = self._full_rhs(u4, tau + h * k3t)
        un = P(u + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u))
        tn = tau + h / 6 * (k1t + 2 * k2t + 2 * k3t + k4t)
        return un, tn


def step(state: FlowState, dt: float, config: SolverConfig) -> FlowState:
    st = Stepper(state.grid, config)
    u, tau = st.step(state.u_hat, state.tau_hat, dt)
    return FlowState(state.grid, state.time + dt, u, tau)


# --------------------------------------------------------------------------- simulation

@dataclass
class SnapshotSeries:
    """Saved states (optional) and per-snapshot diagnostics."""

    times: list[float] = field(default_factory=list)
    states: list[FlowState] = field(default_factory=list)
    divergence: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    E0: float = 0.0
    extra: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.times)


def _march_times(t0: float, t_end: float, dt: float, snaps: Sequence[float]):
    """Yield (h, is_snapshot) so that every snapshot time is hit exactly."""
    targets = sorted(set([float(s) for s in snaps if s > t0] + [float(t_end)]))
    t = t0
    for tgt in targets:
        n = max(1, int(math.ceil((tgt - t) / dt - 1e-9)))
        h = (tgt - t) / n
        for i in range(n):
            yield h, (i == n - 1) and tgt in snaps
        t = tgt


def simulate(initial: FlowState, config: SolverConfig, keep_states: bool = True,
             on_snapshot: Optional[Callable[[FlowState], dict]] = None,
             p: Optional[float] = None) -> SnapshotSeries:
    """March ``initial`` to ``t_end``, saving diagnostics at ``snapshot_times``.

    The energy functional uses the saved snapshots for its time integrals.  The run
    aborts if it exceeds ``blowup_factor * E0`` or becomes non-finite.
    """
    g = initial.grid
    cfg = config.cfg or DyadicConfig.for_grid(g)
    p = config.params.p_index if p is None else p
    d = g.dim
    stepper = Stepper(g, config)
    series = SnapshotSeries()
    series.E0 = initial_energy(initial, cfg, p)
    log.info("E0 = %.6e", series.E0)
    lows, hus, hts = [], [], []
    snaps = [float(s) for s in config.snapshot_times]

    def record(st: FlowState):
        series.times.append(st.time)
        series.divergence.append(st.divergence_residual())
        lt = pair_table(st, cfg, 2.0, cfg.low_bands)
        tu, tt = state_band_table(st, cfg, p, cfg.high_bands)
        lows.append([lt[k] for k in cfg.low_bands])
        hus.append([tu[k] for k in cfg.high_bands])
        hts.append([tt[k] for k in cfg.high_bands])
        E = energy_from_tables(np.array(series.times), np.array(lows), np.array(hus),
                               np.array(hts), cfg, d, p)
        series.energy.append(float(E[-1]))
        if keep_states:
            series.states.append(st)
        series.extra.append(on_snapshot(st) if on_snapshot else {})
        if not np.isfinite(E[-1]):
            raise BlowUpError(f"non-finite state at t={st.time}")
        if series.E0 > 0 and E[-1] > config.blowup_factor * series.E0:
            raise BlowUpError(f"E(t)={E[-1]:.3e} exceeds {config.blowup_factor}*E0 at t={st.time}")

    u, tau = initial.u_hat.copy(), initial.tau_hat.copy()
    t = initial.time
    if not snaps or snaps[0] <= t:
        record(initial)
    for h, snap in _march_times(t, config.t_end, config.dt, snaps):
        u, tau = stepper.step(u, tau, h)
        t += h
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(tau))):
            raise BlowUpError(f"NaN/inf encountered at t={t}")
        if snap:
            # snap the clock to the exact target to avoid drift in saved times
            tt = min(snaps, key=lambda s: abs(s - t))
            t = tt
            record(FlowState(g, t, u.copy(), tau.copy()))
    return series


def coevolve_error(initial: FlowState, series: SnapshotSeries,
                   params: ModelParams) -> list[FlowState]:
    """Error states ``(u - u_L, tau - tau_L)`` at every saved snapshot."""
    if not series.states:
        raise ValueError("series carries no states (run with keep_states=True)")
    out = []
    for st in series.states:
        if st.grid is not initial.grid and st.grid.signature != initial.grid.signature:
            raise ValueError(f"grid mismatch: {st.grid.signature} vs {initial.grid.signature}")
        if st.time < initial.time:
            raise ValueError("snapshot precedes the initial time")
        lin = propagate_state_closed(initial, st.time - initial.time, params)
        out.append(st - lin)
    return out
