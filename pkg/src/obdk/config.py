"""
INI run configuration.

Sections and keys (defaults in brackets)::

    [grid]       d [2], n [64], L [2*pi]      (L accepts a number or "<c>*pi")
    [params]     nu1 [1], nu2 [1], eta [1], q_slip [0], p [2]
    [dyadic]     k0 [k_hi - 3], filter [sharp]
    [solver]     dt [0.01], t_end [1], scheme [etd-rk2],
                 snapshots [geom:0.1:1:11]   (comma list or "geom:a:b:n" / "lin:a:b:n")
    [experiment] sigma1 [-1], class [ring], ring_gap [1], amplitude [1e-3],
                 tau_mode [potential], k_top [k0], sigma_list [0, 0.5, 1],
                 window [1, 10], mode [continuum], t_grid [geom:10:1e4:61],
                 continuum_k_lo [-60], continuum_k0 [2], sigma_dprime [0.01],
                 box_fraction [0.2]
    [output]     directory [out], formats [csv, json, png]
    [run]        seed [required by randomized commands], workers [1]
    [besov]      checkpoint [], field [u], s [0], p [2], r [1]

Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .harness import CLASSES, TAU_MODES, ProfileSpec
from .spectral import ModelParams, SpectralGrid, create_grid
from .solver import SCHEMES

FILTERS = ("sharp", "smooth")
FORMATS = ("csv", "json", "png")


class ConfigError(ValueError):
    pass


SCHEMA = {
    "grid": {"d": "2", "n": "64", "L": "2*pi"},
    "params": {"nu1": "1", "nu2": "1", "eta": "1", "q_slip": "0", "p": "2"},
    "dyadic": {"k0": "", "filter": "sharp"},
    "solver": {"dt": "0.01", "t_end": "1", "scheme": "etd-rk2", "snapshots": "geom:0.1:1:11"},
    "experiment": {"sigma1": "-1", "class": "ring", "ring_gap": "1", "amplitude": "1e-3",
                   "tau_mode": "potential", "k_top": "", "sigma_list": "0, 0.5, 1",
                   "window": "1, 10", "mode": "continuum", "t_grid": "geom:10:1e4:61",
                   "continuum_k_lo": "-60", "continuum_k0": "2", "sigma_dprime": "0.01",
                   "box_fraction": "0.2"},
    "output": {"directory": "out", "formats": "csv, json, png"},
    "run": {"seed": "", "workers": "1"},
    "besov": {"checkpoint": "", "field": "u", "s": "0", "p": "2", "r": "1"},
}

_PI = re.compile(r"^\s*([-+0-9.eE]*)\s*\*?\s*pi\s*$")


def parse_length(text: str) -> float:
    m = _PI.match(text)
    if m:
        c = m.group(1)
        return (float(c) if c else 1.0) * math.pi
    return float(text)


def parse_float_list(text: str) -> list[float]:
    return [float(x) for x in re.split(r"[,\s]+", text.strip()) if x]


def parse_times(text: str) -> np.ndarray:
    """Comma list, or ``geom:a:b:n`` / ``lin:a:b:n``."""
    text = text.strip()
    if text.startswith(("geom:", "lin:")):
        kind, a, b, n = text.split(":")
        fn = np.geomspace if kind == "geom" else np.linspace
        return fn(float(a), float(b), int(n))
    return np.array(parse_float_list(text))


def _optional_int(text: str) -> Optional[int]:
    return int(text) if text.strip() else None


@dataclass
class RunConfig:
    grid_d: int
    grid_n: int
    grid_L: float
    params: ModelParams
    k0: Optional[int]
    filter: str
    dt: float
    t_end: float
    scheme: str
    snapshots: np.ndarray
    profile: ProfileSpec
    sigma_list: list[float]
    window: tuple[float, float]
    mode: str
    t_grid: np.ndarray
    continuum_k_lo: int
    continuum_k0: int
    sigma_dprime: float
    box_fraction: float
    out_dir: Path
    formats: list[str]
    seed: Optional[int]
    workers: int
    besov: dict
    raw: dict = field(default_factory=dict)

    def grid(self) -> SpectralGrid:
        return create_grid(self.grid_d, self.grid_n, self.grid_L)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("[run] seed is mandatory for randomized commands")
        return self.seed

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        prof = ProfileSpec(**{**asdict(self.profile), "seed": int(seed)})
        raw = {s: dict(v) for s, v in self.raw.items()}
        raw["run"]["seed"] = str(seed)
        return RunConfig(**{**self.__dict__, "seed": int(seed), "profile": prof, "raw": raw})

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _load_raw(source: Union[str, Path], text: Optional[str]) -> dict:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        if text is not None:
            cp.read_string(text, source=str(source))
        else:
            path = Path(source)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key '{key}' in [{sec}]")
    for sec, keys in SCHEMA.items():
        raw[sec] = {k: (cp[sec][k] if cp.has_option(sec, k) else v) for k, v in keys.items()}
    return raw


def _choice(value: str, allowed, what: str) -> str:
    if value not in allowed:
        raise ConfigError(f"{what} must be one of {tuple(allowed)}, got {value!r}")
    return value


def parse_config(source: Union[str, Path] = "<defaults>", text: Optional[str] = None) -> RunConfig:
    """Parse and validate a config file (or ``text``); invariants are checked here."""
    raw = _load_raw(source, "" if text is None and source == "<defaults>" else text)
    g, pr, dy, so, ex, ou, ru, be = (raw[s] for s in SCHEMA)
    try:
        d, n, L = int(g["d"]), int(g["n"]), parse_length(g["L"])
        create_grid(d, n, L)
        params = ModelParams(float(pr["nu1"]), float(pr["nu2"]), float(pr["eta"]),
                             float(pr["q_slip"]), d, float(pr["p"]))
        seed = _optional_int(ru["seed"])
        prof = ProfileSpec(float(ex["sigma1"]), _choice(ex["class"], CLASSES, "class"),
                           int(ex["ring_gap"]), float(ex["amplitude"]),
                           0 if seed is None else seed,
                           _choice(ex["tau_mode"], TAU_MODES, "tau_mode"),
                           _optional_int(ex["k_top"]))
        prof.check_indices(d, params.p_index)
        window = tuple(parse_float_list(ex["window"]))
        if len(window) != 2 or not 0 < window[0] < window[1]:
            raise ConfigError(f"window must be 't_lo, t_hi' with 0 < t_lo < t_hi, got {ex['window']}")
        sigma_list = parse_float_list(ex["sigma_list"])
        for s in sigma_list:
            if not prof.sigma1 < s <= d / 2:
                raise ConfigError(f"sigma={s} outside (sigma1, d/2] = ({prof.sigma1}, {d / 2}]")
        sdp = float(ex["sigma_dprime"])
        if not 0 < sdp <= 0.05:
            raise ConfigError(f"sigma_dprime must lie in (0, 0.05], got {sdp}")
        dt, t_end = float(so["dt"]), float(so["t_end"])
        if not dt > 0 or not t_end > 0:
            raise ConfigError("dt and t_end must be > 0")
        snaps = parse_times(so["snapshots"])
        if snaps.size and (snaps.min() < 0 or snaps.max() > t_end + 1e-12):
            raise ConfigError("snapshots must lie in [0, t_end]")
        formats = [f.strip() for f in ou["formats"].split(",") if f.strip()]
        for f in formats:
            _choice(f, FORMATS, "output format")
        workers = int(ru["workers"])
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        besov = {"checkpoint": be["checkpoint"], "field": _choice(be["field"], ("u", "tau", "pair"),
                                                                  "besov field"),
                 "s": float(be["s"]), "p": float(be["p"]), "r": float(be["r"])}
        if besov["p"] < 1 or besov["r"] < 1:
            raise ConfigError("besov p and r must be >= 1")
        return RunConfig(d, n, L, params, _optional_int(dy["k0"]),
                         _choice(dy["filter"], FILTERS, "filter"), dt, t_end,
                         _choice(so["scheme"], SCHEMES, "scheme"), snaps, prof, sigma_list,
                         (float(window[0]), float(window[1])),
                         _choice(ex["mode"], ("continuum", "grid"), "mode"),
                         parse_times(ex["t_grid"]), int(ex["continuum_k_lo"]),
                         int(ex["continuum_k0"]), sdp, float(ex["box_fraction"]),
                         Path(ou["directory"]), formats, seed, workers, besov, raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
