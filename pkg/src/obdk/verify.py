"""
Identity and property suite behind the ``verify`` and ``propagator-check`` commands.

Every row is ``(name, value, tolerance, passed)``; the suite is deterministic for a seed.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .checkpoint import read_state, write_state
from .linear import (aux_fields, characteristic_roots, linear_group_modes, lyapunov_Lk,
                     multipliers, multipliers_quotient, propagate_modes_oracle,
                     propagate_state_closed)
from .littlewood_paley import DyadicConfig, band_table
from .solver import SolverConfig, Stepper
from .spectral import (FlowState, ModelParams, SpectralGrid, create_grid, curl_tensor,
                       div3, div_tensor, gradient, inner, l2_norm_physical, l2_norm_spectral,
                       lambda_power, leray_project, random_state, sym_to_full, to_physical,
                       to_spectral, tri_weights)

SWEEP_K = (0.01, 0.1, 0.5, 1.0, math.sqrt(2) - 1e-3, math.sqrt(2) + 1e-3, 2.0, 4.0, 8.0)
SWEEP_T = (0.1, 1.0, 10.0)


@dataclass
class Row:
    name: str
    value: float
    tol: float
    passed: bool

    def line(self) -> str:
        return f"{self.name:<46s} {self.value:12.3e} <= {self.tol:8.1e}  {'pass' if self.passed else 'FAIL'}"


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    den = max(float(np.abs(b).max()), float(np.abs(a).max()), 1e-300)
    return float(np.abs(a - b).max() / den)


def _row(name: str, value: float, tol: float) -> Row:
    return Row(name, float(value), tol, bool(value <= tol))


# --------------------------------------------------------------------------- propagator

@dataclass
class SweepResult:
    worst: float
    runtime: float
    table: list[tuple[int, float, float, float]]


def propagator_sweep(seed: int = 0, params: ModelParams = None, modes: int = 6) -> SweepResult:
    """Closed form vs per-mode RK4 oracle over ``SWEEP_K x SWEEP_T`` in d = 2, 3."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    table, worst = [], 0.0
    for d in (2, 3):
        P = params or ModelParams(dim=d)
        if P.dim != d:
            P = ModelParams(P.nu1, P.nu2, P.eta, P.q_slip, d, 2.0)
        for k in SWEEP_K:
            for t in SWEEP_T:
                dirs = rng.standard_normal((d, modes))
                dirs /= np.linalg.norm(dirs, axis=0)
                xi = dirs * k
                u0 = rng.standard_normal((d, modes)) + 1j * rng.standard_normal((d, modes))
                u0 -= dirs * np.sum(dirs * u0, axis=0)
                nt = d * (d + 1) // 2
                tau0 = rng.standard_normal((nt, modes)) + 1j * rng.standard_normal((nt, modes))
                uc, tc = linear_group_modes(xi, u0, tau0, t, P)
                uo, to = propagate_modes_oracle(xi, u0, tau0, t, P)
                x1, x2 = np.concatenate([uc, tc]), np.concatenate([uo, to])
                err = float((np.abs(x1 - x2).max(axis=0) / np.abs(x2).max(axis=0)).max())
                worst = max(worst, err)
                table.append((d, k, t, err))
    return SweepResult(worst, time.perf_counter() - t0, table)


# --------------------------------------------------------------------------- identity rows

def identity_rows(grid: SpectralGrid, seed: int) -> list[Row]:
    """Exact algebraic identities on one random state."""
    rng = np.random.default_rng(seed)
    g = grid
    d = g.dim
    st = random_state(g, rng)
    u, tau = st.u_hat, st.tau_hat
    tf = sym_to_full(tau, d)
    raw = to_spectral(g, rng.standard_normal((d,) + g.shape))
    tag = f"[{d}d n={g.n}]"
    rows = []
    pv = leray_project(g, raw)
    rows.append(_row(f"leray idempotent {tag}", _rel(leray_project(g, pv), pv), 1e-10))
    phi = to_spectral(g, rng.standard_normal(g.shape))
    rows.append(_row(f"leray annihilates gradients {tag}",
                     l2_norm_spectral(g, leray_project(g, gradient(g, phi)))
                     / l2_norm_spectral(g, gradient(g, phi)), 1e-10))
    lap = -g.k2 * tf
    rhs = gradient(g, div_tensor(g, tf)) + div3(g, curl_tensor(g, tf))
    rows.append(_row(f"lap tau = grad div + div curl {tag}", _rel(rhs, lap), 1e-10))
    aux = aux_fields(st)
    rows.append(_row(f"stress reconstruction from (v,w) {tag}", aux.residuals["reconstruction"], 1e-10))
    rows.append(_row(f"effective tensor laplacian {tag}", aux.residuals["laplacian_W"], 1e-10))
    rows.append(_row(f"P tau = tau + grad(-lap)^-1 div tau {tag}",
                     aux.residuals["stress_identity"], 1e-10))
    guT = np.swapaxes(gradient(g, u), 0, 1)
    n3 = d ** 3
    a = (-0.5 * lambda_power(g, curl_tensor(g, guT), -1.0)).reshape((n3,) + g.spec_shape)
    b = lambda_power(g, curl_tensor(g, tf), -1.0).reshape((n3,) + g.spec_shape)
    lhs, rhs_c = inner(g, a, b), inner(g, div_tensor(g, tf), u)
    rows.append(_row(f"key cancellation identity {tag}", abs(lhs - rhs_c) / max(abs(rhs_c), 1e-300),
                     1e-10))
    pd = leray_project(g, div_tensor(g, tf))
    r = inner(g, pd, u)
    rows.append(_row(f"<P div tau, u> = <div tau, u> {tag}", abs(r - rhs_c) / max(abs(rhs_c), 1e-300),
                     1e-10))
    back = to_spectral(g, to_physical(g, u))
    rows.append(_row(f"transform round trip {tag}", _rel(back, u), 1e-12))
    rows.append(_row(f"Parseval {tag}", abs(l2_norm_physical(g, to_physical(g, tau), tri_weights(d))
                                            - l2_norm_spectral(g, tau, tri_weights(d)))
                     / l2_norm_spectral(g, tau, tri_weights(d)), 1e-12))
    cfg = DyadicConfig.for_grid(g)
    bt = band_table(u, cfg)
    rows.append(_row(f"band Parseval {tag}",
                     abs(math.sqrt(sum(v * v for v in bt.values())) - l2_norm_spectral(g, u))
                     / l2_norm_spectral(g, u), 1e-12))
    cs = DyadicConfig.for_grid(g, filter="smooth")
    tot = sum(cs.weights(k) for k in cs.bands)
    rows.append(_row(f"smooth partition of unity {tag}", float(np.abs(tot[g.k2 > 0] - 1).max()), 1e-12))
    return rows


def dynamics_rows(seed: int) -> list[Row]:
    rows = []
    P = ModelParams(dim=2)
    ks = np.linspace(1e-3, 20.0, 1000)
    r = characteristic_roots(ks ** 2, P)
    s = r.lambda_plus + r.lambda_minus
    pr = r.lambda_plus * r.lambda_minus
    rows.append(_row("root sum = -eta k^2", float(np.max(np.abs(s + ks ** 2) / ks ** 2)), 1e-12))
    rows.append(_row("root product = nu1 nu2 k^2/2", float(np.max(np.abs(pr - ks ** 2 / 2) / (ks ** 2 / 2))),
                     1e-12))
    osc = ks < math.sqrt(2)
    rows.append(_row("Re root = -k^2/2 below sqrt 2",
                     float(np.max(np.abs(r.lambda_plus[osc].real + ks[osc] ** 2 / 2)
                                  / (ks[osc] ** 2 / 2))), 1e-12))
    m = multipliers(math.pi / 2, 1.0, P)
    rows.append(_row("A(pi/2, 1) = sqrt2 exp(-pi/4)", abs(m.A - math.sqrt(2) * math.exp(-math.pi / 4)),
                     1e-12))
    k = math.sqrt(2) + 1e-6
    m1, m2 = multipliers(1.0, k, P), multipliers_quotient(1.0, k, P)
    rows.append(_row("multipliers continuous at double root",
                     max(abs(m1.A - m2.A), abs(m1.B - m2.B), abs(m1.C - m2.C)), 1e-5))
    sw = propagator_sweep(seed, P)
    rows.append(_row("closed form vs RK4 oracle", sw.worst, 1e-8))
    # Lyapunov monotonicity on a short linear run
    g = create_grid(2, 32, 2 * math.pi * 4)
    rng = np.random.default_rng(seed)
    st0 = random_state(g, rng)
    cfg = DyadicConfig.for_grid(g)
    worst = 0.0
    for kb in cfg.low_bands:
        vals = [lyapunov_Lk(propagate_state_closed(st0, t, P), kb, cfg)
                for t in np.linspace(0, 5, 26)]
        v = np.array(vals)
        if v[0] > 0:
            worst = max(worst, float(np.max(np.diff(v) / v[:-1])))
    rows.append(_row("Lyapunov L_k non-increasing", max(worst, 0.0), 1e-9))
    # one nonlinear step keeps divergence free and real
    Pn = ModelParams(q_slip=0.5, dim=2)
    sc = SolverConfig(dt=1e-2, t_end=1e-2, params=Pn)
    u1, t1 = Stepper(g, sc).step(st0.u_hat, st0.tau_hat, 1e-2)
    rows.append(_row("divergence after nonlinear step", FlowState(g, 0.01, u1, t1).divergence_residual(),
                     1e-10))
    buf = io.BytesIO()
    write_state(buf, st0, P)
    buf.seek(0)
    back, _ = read_state(buf)
    same = np.array_equal(back.u_hat, st0.u_hat) and np.array_equal(back.tau_hat, st0.tau_hat)
    rows.append(_row("checkpoint round trip bitwise", 0.0 if same else 1.0, 0.0))
    return rows


def run_suite(seed: int = 0, grids: tuple = ((2, 64, 2 * math.pi * 3), (3, 32, 2 * math.pi * 1.3)),
              progress: Callable[[Row], None] = None) -> list[Row]:
    rows = []
    for d, n, L in grids:
        for r in identity_rows(create_grid(d, n, L), seed):
            rows.append(r)
            if progress:
                progress(r)
    for r in dynamics_rows(seed):
        rows.append(r)
        if progress:
            progress(r)
    return rows
