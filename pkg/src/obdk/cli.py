"""
Command-line entry point: ``obdk <command> --config PATH [--out DIR] [--workers N] [--seed S]``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import plotting, reports
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .harness import (NonlinearReport, ProfileSpec, linear_decay_experiment,
                      nonlinear_decay_experiment, sharpness_experiment)
from .littlewood_paley import DyadicConfig, besov_norm, pair_table, assemble
from .solver import SolverConfig
from .spectral import tri_weights
from .verify import propagator_sweep, run_suite

log = logging.getLogger("obdk")

COMMANDS = ("verify", "propagator-check", "besov", "linear-decay", "nonlinear-decay", "sharpness")

TOL = {"propagator": 1e-8, "identity": 1e-10, "linear_fit": 0.05, "nonlinear_fit": 0.15,
       "error_gap": 0.1, "energy_ratio": 2.0, "divergence": 1e-10, "dtilde_ratio": 1.5,
       "b_inf_ratio": 3.0, "band": 10.0}


def _workers(arg: Optional[int]) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("OBDK_WORKERS")
    return max(1, int(env)) if env else 1


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _series_csvs(out: Path, prefix: str, series: dict) -> list[Path]:
    paths = []
    for key, ser in series.items():
        name = f"{prefix}_sigma{key:g}.csv" if isinstance(key, float) or isinstance(key, int) \
            else f"{prefix}_{key}.csv"
        paths.append(reports.write_series_csv(out / name, ser.t, ser.values))
    return paths


# --------------------------------------------------------------------------- commands

def cmd_verify(rc: RunConfig, out: Path, workers: int):
    seed = rc.require_seed()
    rows = run_suite(seed, progress=lambda r: print(r.line()))
    ok = all(r.passed for r in rows)
    print(f"{sum(r.passed for r in rows)}/{len(rows)} rows pass")
    art = [reports.write_csv(out / "verify.csv", ["name", "value", "tol", "passed"],
                             [(r.name, r.value, r.tol, "pass" if r.passed else "FAIL") for r in rows])]
    return (0 if ok else 1), art, {"identity": TOL["identity"]}


def cmd_propagator(rc: RunConfig, out: Path, workers: int):
    sw = propagator_sweep(rc.seed or 0)
    ok = sw.worst <= TOL["propagator"]
    print(f"closed form vs oracle: worst relative error {sw.worst:.3e} "
          f"({'pass' if ok else 'FAIL'}), {sw.runtime:.2f} s")
    art = [reports.write_csv(out / "propagator_sweep.csv", ["d", "kmag", "t", "rel_error"], sw.table),
           reports.write_json(out / "propagator_check.json",
                              {"experiment": "propagator-check", "worst": sw.worst,
                               "runtime_s": sw.runtime, "tolerance": TOL["propagator"],
                               "verdict": "pass" if ok else "FAIL"})]
    if "png" in rc.formats:
        art.append(plotting.plot_sweep(out / "propagator_sweep.png", sw.table))
    return (0 if ok else 1), art, {"propagator": TOL["propagator"]}


def cmd_besov(rc: RunConfig, out: Path, workers: int):
    path = rc.besov["checkpoint"]
    if not path:
        raise ConfigError("[besov] checkpoint is required for the besov command")
    if not Path(path).exists():
        raise FileNotFoundError(f"missing input checkpoint: {path}")
    state, _ = load_checkpoint(path)
    cfg = DyadicConfig.for_grid(state.grid, rc.k0, rc.filter)
    b = rc.besov
    if b["field"] == "u":
        rep = besov_norm(state.u_hat, b["s"], b["p"], b["r"], cfg)
    elif b["field"] == "tau":
        rep = besov_norm(state.tau_hat, b["s"], b["p"], b["r"], cfg, tri_weights(state.dim))
    else:
        tab = pair_table(state, cfg, b["p"])
        rep = besov_norm(state.u_hat, b["s"], b["p"], b["r"], cfg)
        rep.band_norms = tab
        rep.value = assemble(tab, b["s"], b["r"])
        rep.low_value = assemble(tab, b["s"], b["r"], cfg.low_bands)
        rep.high_value = assemble(tab, b["s"], b["r"], cfg.high_bands)
    print(f"B^{b['s']:g}_{{{b['p']:g},{b['r']:g}}} norm of {b['field']}: {rep.value:.17g}")
    art = [reports.write_json(out / "besov.json", {"experiment": "besov", "field": b["field"],
                                                  "checkpoint": path, **rep.to_dict()})]
    return 0, art, {}


def _linear_one(args):
    rc, sigma = args
    return linear_decay_experiment(rc.profile, [sigma], rc.t_grid, rc.params, rc.mode, rc.grid_d,
                                   rc.continuum_k0, rc.continuum_k_lo, rc.window,
                                   **_grid_kw(rc))


def _grid_kw(rc: RunConfig) -> dict:
    if rc.mode != "grid":
        return {}
    g = rc.grid()
    return {"grid": g, "cfg": DyadicConfig.for_grid(g, rc.k0, rc.filter)}


def cmd_linear(rc: RunConfig, out: Path, workers: int):
    parts = _pmap(_linear_one, [(rc, s) for s in rc.sigma_list], workers)
    series = {s: p[s] for s, p in zip(rc.sigma_list, parts)}
    s1 = rc.profile.sigma1
    fits, ok = [], True
    for s, ser in series.items():
        target = 0.5 * (s - s1)
        good = abs(ser.fit.exponent - target) <= TOL["linear_fit"]
        if rc.profile.klass == "ring":
            ok &= good
        fits.append({"sigma": s, "target": target, **ser.fit.to_dict()})
        print(f"sigma={s:g}: alpha={ser.fit.exponent:.4f} +- {ser.fit.ci_halfwidth:.4f} "
              f"(target {target:.4f}) {'pass' if good else 'off-target'}")
    art = _series_csvs(out, "linear", series)
    art.append(reports.write_series_csv(out / "linear_high.csv", parts[0]["high"].t,
                                        parts[0]["high"].values))
    art.append(reports.write_json(out / "linear_decay.json", {
        "experiment": "linear-decay", "mode": rc.mode, "spec": rc.profile.__dict__, "fits": fits,
        "verdicts": {"rates": "pass" if ok else "FAIL",
                     "asserted": rc.profile.klass == "ring"}}))
    if "png" in rc.formats:
        art.append(plotting.plot_decay(out / "linear_decay.png", series, s1, rc.window))
        art.append(plotting.plot_compensated(out / "linear_compensated.png", series, s1, rc.window))
    return (0 if ok else 1), art, {"linear_fit": TOL["linear_fit"]}


def nonlinear_verdicts(rep: NonlinearReport) -> dict:
    fits_ok = all(f is not None and abs(f.exponent - 0.5 * (s - rep.sigma1)) <= TOL["nonlinear_fit"]
                  for s, f in rep.fits.items())
    gaps = [g for g in (rep.gap(s) for s in rep.fits) if np.isfinite(g)]
    return {
        "divergence": bool(rep.divergence.max() <= TOL["divergence"]),
        "energy": bool(rep.energy.max() <= TOL["energy_ratio"] * rep.E0),
        "solution_rates": bool(fits_ok),
        "error_gain": bool(gaps and max(gaps) >= TOL["error_gap"]),
        "dtilde_bounded": bool(rep.dtilde.half_ratio() <= TOL["dtilde_ratio"]),
        "b_inf_sigma1": bool(rep.b_inf_sigma1.max() <= TOL["b_inf_ratio"] * rep.b_inf_sigma1[0]),
    }


def cmd_nonlinear(rc: RunConfig, out: Path, workers: int):
    rc.require_seed()
    g = rc.grid()
    cfg = DyadicConfig.for_grid(g, rc.k0, rc.filter)
    # window ends are always sampled so the fit spans the full decade
    snaps = np.union1d(rc.snapshots, [0.0, *rc.window])
    sc = SolverConfig(rc.dt, rc.t_end, rc.params, rc.scheme, list(snaps[snaps <= rc.t_end]), cfg=cfg)
    rep = nonlinear_decay_experiment(rc.profile, g, rc.params, rc.sigma_list, sc, rc.window, cfg,
                                     rc.box_fraction, rc.sigma_dprime)
    ver = nonlinear_verdicts(rep)
    ok = all(ver.values())
    for k, v in ver.items():
        print(f"{k:<16s} {'pass' if v else 'FAIL'}")
    art = _series_csvs(out, "solution", rep.solution) + _series_csvs(out, "error", rep.error)
    art.append(reports.write_csv(out / "diagnostics.csv",
                                 ["t", "energy", "divergence", "high", "b_inf_sigma1", "dtilde_low",
                                  "dtilde_high_grad", "dtilde_high_tau"],
                                 zip(rep.times, rep.energy, rep.divergence, rep.hybrid,
                                     rep.b_inf_sigma1, rep.dtilde.low, rep.dtilde.high_grad,
                                     rep.dtilde.high_tau)))
    for tag, st in (("initial", rep.initial), ("final", rep.final)):
        if st is not None:
            art.append(save_checkpoint(out / f"{tag}.obdk", st, rc.params))
    payload = rep.to_dict()
    payload.update({"spec": rep_spec(rc.profile), "t0": rep.window[0], "verdicts": ver})
    art.append(reports.write_json(out / "nonlinear_decay.json", payload))
    if "png" in rc.formats:
        art.append(plotting.plot_decay(out / "nonlinear_solution.png", rep.solution, rep.sigma1,
                                       rc.window, "solution low-frequency norms"))
        art.append(plotting.plot_decay(out / "nonlinear_error.png", rep.error, rep.sigma1,
                                       rc.window, "error low-frequency norms", reference=False))
        art.append(plotting.plot_energy(out / "nonlinear_energy.png", rep.times, rep.energy, rep.E0))
    tol = {k: TOL[k] for k in ("nonlinear_fit", "error_gap", "energy_ratio", "divergence",
                               "dtilde_ratio", "b_inf_ratio")}
    return (0 if ok else 1), art, tol


def rep_spec(spec: ProfileSpec) -> dict:
    return dict(spec.__dict__)


def _sharp_one(args):
    rc, sigma = args
    return sharpness_experiment(rc.profile, [sigma], rc.params, rc.t_grid, rc.window, rc.mode,
                                rc.grid_d, rc.continuum_k0, TOL["linear_fit"], TOL["band"],
                                k_lo=rc.continuum_k_lo, **_grid_kw(rc))


def cmd_sharpness(rc: RunConfig, out: Path, workers: int):
    parts = _pmap(_sharp_one, [(rc, s) for s in rc.sigma_list], workers)
    fits, bands, verdicts, series = {}, {}, {}, {}
    for s, p in zip(rc.sigma_list, parts):
        fits.update(p.fits)
        bands.update(p.bands)
        verdicts.update(p.verdicts)
        series[s] = p.series[s]
    ok = all(v["expected"] for v in verdicts.values())
    for name, v in verdicts.items():
        print(f"{name}: upper: {v['upper']}; lower bound: {v['lower bound']}")
    art = _series_csvs(out, "sharpness", series)
    art.append(reports.write_json(out / "sharpness.json", {
        "experiment": "sharpness", "spec": rep_spec(rc.profile),
        "fits": [dict(sigma=s, target=0.5 * (s - rc.profile.sigma1), **f.to_dict())
                 for s, f in fits.items()],
        "compensated_band": {str(s): b for s, b in bands.items()}, "verdicts": verdicts}))
    if "png" in rc.formats:
        art.append(plotting.plot_compensated(out / "sharpness_compensated.png", series,
                                             rc.profile.sigma1, rc.window))
    return (0 if ok else 1), art, {"linear_fit": TOL["linear_fit"], "band": TOL["band"]}


HANDLERS = {"verify": cmd_verify, "propagator-check": cmd_propagator, "besov": cmd_besov,
            "linear-decay": cmd_linear, "nonlinear-decay": cmd_nonlinear,
            "sharpness": cmd_sharpness}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="obdk", description="Oldroyd-B low-frequency decay toolkit")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI config file")
    ap.add_argument("--out", default=None, help="output directory (overrides [output] directory)")
    ap.add_argument("--workers", type=int, default=None, help="worker processes (env OBDK_WORKERS)")
    ap.add_argument("--seed", type=int, default=None, help="override [run] seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run_command(name: str, rc: RunConfig, out: Optional[Path] = None,
                workers: int = 1) -> tuple[int, list[Path]]:
    if name not in HANDLERS:
        raise ValueError(f"unknown command {name!r}; choose from {COMMANDS}")
    out = Path(out or rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    status, art, tol = HANDLERS[name](rc, out, workers)
    reports.write_manifest(out, name, rc.digest(), rc.raw, tol, art, status, rc.seed, workers)
    return status, art


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = parse_config(args.config).with_seed(args.seed)
        status, _ = run_command(args.command, rc, args.out, _workers(args.workers))
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
