"""
Exact Fourier-side solution of the linearised system

    d/dt u - nu1 P div tau = 0,    d/dt tau - eta Lap tau - nu2 D(u) = 0.

Per mode, the pair ``(u_hat, Z_hat)`` with ``Z = P Lambda^{-1} div tau`` obeys

    u' = nu1 |xi| Z,    Z' = -eta |xi|^2 Z - (nu2/2) |xi| u,

whose characteristic roots are ``lambda_pm``.  The remainder ``tau - S(Z)`` (see
:func:`potential_stress`) evolves by the pure heat semigroup.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .littlewood_paley import DyadicConfig
from .spectral import (FlowState, ModelParams, SpectralGrid, curl_tensor, div_tensor,
                       gradient, inner, l2_norm_spectral, lambda_power, leray_project,
                       leray_rows, lp_norm_physical, ntri, sym_to_full, to_physical,
                       tri_pairs, tri_weights)

SERIES_SWITCH = 1e-2  # |delta t| below which the series form of sinh(z)/z is used


@dataclass(frozen=True)
class RootPair:
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    discriminant: np.ndarray


@dataclass(frozen=True)
class Multipliers:
    """Green-matrix entries.  ``osc_freq`` is ``b = sqrt(2 nu1 nu2 k^2 - eta^2 k^4)``
    (NaN where the roots are real); the oscillation has angular frequency ``b/2``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    heat: np.ndarray
    osc_freq: np.ndarray


def discriminant(k2, params: ModelParams):
    k2 = np.asarray(k2, dtype=float)
    return k2 * (params.eta ** 2 * k2 - 2.0 * params.nu1 * params.nu2)


def characteristic_roots(k2, params: ModelParams) -> RootPair:
    """Roots of ``lambda^2 + eta k2 lambda + (nu1 nu2/2) k2 = 0``, cancellation-free."""
    k2 = np.asarray(k2, dtype=float)
    disc = discriminant(k2, params)
    alpha = -0.5 * params.eta * k2
    prod = 0.5 * params.nu1 * params.nu2 * k2
    real = disc >= 0
    sq = np.sqrt(np.abs(disc))
    lm_real = alpha - 0.5 * sq
    with np.errstate(divide="ignore", invalid="ignore"):
        lp_real = np.where(lm_real != 0, prod / np.where(lm_real != 0, lm_real, 1.0), 0.0)
    lp = np.where(real, lp_real + 0j, alpha + 0.5j * sq)
    lm = np.where(real, lm_real + 0j, alpha - 0.5j * sq)
    return RootPair(lp, lm, disc)


def _sinhc_cosh(zsq):
    """``sinh(z)/z`` and ``cosh(z)`` as functions of the real quantity ``z**2``."""
    zsq = np.asarray(zsq, dtype=float)
    small = np.abs(zsq) < SERIES_SWITCH ** 2
    z = np.sqrt(np.abs(zsq))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        zs = np.where(small, 1.0, z)
        sc = np.where(zsq >= 0, np.sinh(zs) / zs, np.sin(zs) / zs)
        ch = np.where(zsq >= 0, np.cosh(zs), np.cos(zs))
    ser_s = 1 + zsq / 6 * (1 + zsq / 20 * (1 + zsq / 42 * (1 + zsq / 72)))
    ser_c = 1 + zsq / 2 * (1 + zsq / 12 * (1 + zsq / 30 * (1 + zsq / 56)))
    return np.where(small, ser_s, sc), np.where(small, ser_c, ch)


def multipliers(t, kmag, params: ModelParams) -> Multipliers:
    """Green-matrix multipliers at time ``t`` and radius ``kmag`` (broadcasting).

    ``E = (e^{l+ t} - e^{l- t}) / (l+ - l-)``, ``A = e^{l+ t} - l+ E``, ``B = |xi| E``,
    ``C = -l+ E - e^{l- t}``.  All entries are real.  Near the double root, and for
    small times, ``E = t e^{alpha t} sinh(z)/z`` with ``z^2 = disc t^2/4`` is summed as a
    series; split real roots use the exponentials directly to avoid overflow.
    """
    t = np.asarray(t, dtype=float)
    kmag = np.asarray(kmag, dtype=float)
    if np.any(t < 0) or np.any(kmag < 0):
        raise ValueError("t and |xi| must be non-negative")
    shape = np.broadcast_shapes(t.shape, kmag.shape)
    t, kmag = (np.atleast_1d(a).astype(float) for a in np.broadcast_arrays(t, kmag))
    k2 = kmag * kmag
    roots = characteristic_roots(k2, params)
    disc = roots.discriminant
    alpha = -0.5 * params.eta * k2
    zsq = 0.25 * disc * t * t
    sc, ch = _sinhc_cosh(zsq)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        ea = np.exp(alpha * t)
        E = t * ea * sc
        A = ea * ch - alpha * E
        C = -ea * ch - alpha * E
        split = zsq >= SERIES_SWITCH ** 2
        if np.any(split):
            lp, lm = roots.lambda_plus.real[split], roots.lambda_minus.real[split]
            ts = t[split]
            ep, em = np.exp(lp * ts), np.exp(lm * ts)
            Es = (ep - em) / np.sqrt(disc[split])
            E[split] = Es
            A[split] = ep - lp * Es
            C[split] = -lp * Es - em
        heat = np.exp(-params.eta * k2 * t)
    b = np.sqrt(np.where(disc < 0, -disc, np.nan))
    return Multipliers(*(np.reshape(a, shape)[()] for a in (A, kmag * E, C, E, heat, b)))


def multipliers_quotient(t, kmag, params: ModelParams) -> Multipliers:
    """Textbook quotient forms, complex arithmetic; inaccurate near the double root."""
    t = np.asarray(t, dtype=float)
    r = characteristic_roots(np.asarray(kmag, float) ** 2, params)
    lp, lm = r.lambda_plus, r.lambda_minus
    ep, em = np.exp(lp * t), np.exp(lm * t)
    dl = lp - lm
    E = (ep - em) / dl
    A = (lp * em - lm * ep) / dl
    C = (lm * em - lp * ep) / dl
    heat = np.exp(-params.eta * np.asarray(kmag) ** 2 * t)
    return Multipliers(A, np.asarray(kmag) * E, C, E, heat, np.sqrt(-r.discriminant + 0j).real)


def multipliers_trig(t, kmag, params: ModelParams) -> Multipliers:
    """Oscillatory-regime forms with angular frequency ``omega = b/2``."""
    t = np.asarray(t, dtype=float)
    kmag = np.asarray(kmag, dtype=float)
    k2 = kmag ** 2
    disc = discriminant(k2, params)
    if np.any(disc >= 0):
        raise ValueError("trig forms require complex roots (disc < 0)")
    b = np.sqrt(-disc)
    om = 0.5 * b
    damp = np.exp(-0.5 * params.eta * k2 * t)
    sn = np.sin(om * t) / om
    cs = np.cos(om * t)
    h = 0.5 * params.eta * k2
    return Multipliers(damp * (cs + h * sn), kmag * damp * sn, -damp * (cs - h * sn),
                       damp * sn, np.exp(-params.eta * k2 * t), b)


# --------------------------------------------------------------------------- per-mode algebra

def _unit(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors and magnitudes of a (d, ...) wavevector array; zero -> zero."""
    mag = np.sqrt(np.sum(xi * xi, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.where(mag > 0, xi / np.where(mag > 0, mag, 1.0), 0.0)
    return e, mag


def potential_stress(xi: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``S(a) = -i (xi (x) a + a (x) xi)/|xi|`` in symmetric storage.

    For ``a`` transverse to ``xi`` this satisfies ``P Lambda^{-1} div S(a) = a``.
    """
    e, _ = _unit(xi)
    d = xi.shape[0]
    return np.stack([-1j * (e[i] * a[j] + a[i] * e[j]) for i, j in tri_pairs(d)])


def z_of_stress(xi: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """``Z = P Lambda^{-1} div tau`` per mode; zero at ``xi = 0``."""
    d = xi.shape[0]
    e, _ = _unit(xi)
    tf = sym_to_full(tau, d)
    v = np.stack([sum(1j * e[j] * tf[i, j] for j in range(d)) for i in range(d)])
    return v - e * np.sum(e * v, axis=0)


def transversality_residual(xi: np.ndarray, a: np.ndarray) -> np.ndarray:
    e, _ = _unit(xi)
    num = np.abs(np.sum(e * a, axis=0))
    den = np.sqrt(np.sum(np.abs(a) ** 2, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def propagate_uZ_mode(u0, Z0, t, kvec, params: ModelParams, tol: float = 1e-10):
    """Evolve transverse ``(u_hat, Z_hat)`` at wavevector ``kvec`` (leading axis = d)."""
    kvec = np.asarray(kvec, dtype=float)
    u0 = np.asarray(u0, dtype=complex)
    Z0 = np.asarray(Z0, dtype=complex)
    for name, a in (("u0", u0), ("Z0", Z0)):
        r = float(np.max(transversality_residual(kvec, a)))
        if r > tol:
            raise ValueError(f"{name} not transverse to xi (residual {r:.2e})")
    kmag = np.sqrt(np.sum(kvec * kvec, axis=0))
    m = multipliers(t, kmag, params)
    u = m.A * u0 + params.nu1 * m.B * Z0
    Z = -0.5 * params.nu2 * m.B * u0 - m.C * Z0
    return u, Z


def linear_group_modes(xi: np.ndarray, u0: np.ndarray, tau0: np.ndarray, t: float,
                       params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form linear evolution of arbitrary per-mode data ``(u0, tau0)``.

    ``u0`` must be transverse; ``tau0`` is any symmetric tensor.  Valid for every
    parameter set (the block structure does not depend on normalisation).
    """
    _, kmag = _unit(xi)
    m = multipliers(t, kmag, params)
    Z0 = z_of_stress(xi, tau0)
    rest0 = tau0 - potential_stress(xi, Z0)
    u = m.A * u0 + params.nu1 * m.B * Z0
    Z = -0.5 * params.nu2 * m.B * u0 - m.C * Z0
    tau = m.heat * rest0 + potential_stress(xi, Z)
    return u, tau


def propagate_state_closed(state0: FlowState, t: float, params: ModelParams) -> FlowState:
    """Whole-grid closed-form propagation by ``t``; the zero mode is frozen."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return state0.with_fields(state0.u_hat.copy(), state0.tau_hat.copy())
    g = state0.grid
    u, tau = linear_group_modes(g.xi_vec, state0.u_hat, state0.tau_hat, t, params)
    return FlowState(g, state0.time + t, u, tau)


# --------------------------------------------------------------------------- RK4 oracle

def mode_matrix(xi: np.ndarray, params: ModelParams) -> np.ndarray:
    """Per-mode generator of the raw linear system on ``(u_hat, tau_hat_sym)``.

    Built from the physical operators only (Leray projection of ``i xi_j tau^{ij}``
    and ``nu2 D(u)``), independent of the closed-form decomposition.
    Output shape ``xi.shape[1:] + (m, m)`` with ``m = d + d(d+1)/2``.
    """
    d = xi.shape[0]
    nt = ntri(d)
    m = d + nt
    spatial = xi.shape[1:]
    k2 = np.sum(xi * xi, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    M = np.zeros(spatial + (m, m), dtype=complex)
    pairs = tri_pairs(d)
    proj = np.empty((d, d) + spatial)
    for i in range(d):
        for a in range(d):
            proj[i, a] = (1.0 if i == a else 0.0) - xi[i] * xi[a] * inv
    for i in range(d):
        for c, (a, b) in enumerate(pairs):
            # (P div tau)^i = sum_a P_ia i xi_j tau^{aj}; tau^{ab} appears as (a,b) and (b,a)
            val = proj[i, a] * 1j * xi[b]
            if a != b:
                val = val + proj[i, b] * 1j * xi[a]
            M[..., i, d + c] = params.nu1 * val
    for c, (a, b) in enumerate(pairs):
        M[..., d + c, d + c] = -params.eta * k2
        M[..., d + c, a] += 0.5j * params.nu2 * xi[b]
        M[..., d + c, b] += 0.5j * params.nu2 * xi[a]
    return M


def spectral_radius_bound(k2max: float, params: ModelParams) -> float:
    return max(params.eta * k2max, np.sqrt(0.5 * params.nu1 * params.nu2 * k2max))


def oracle_substeps(t: float, k2max: float, params: ModelParams, target: float = 0.01) -> int:
    """Substeps so that ``h * rho <= target`` (accuracy), with ``rho`` the generator radius."""
    return max(1, int(np.ceil(t * spectral_radius_bound(k2max, params) / target)))


def _check_stability(t, substeps, k2max, params):
    h = t / substeps
    if h * params.eta * k2max > 0.5:
        raise ValueError(f"RK4 stability violated: h*eta*k2max = {h * params.eta * k2max:.3g} > 0.5")


def rk4_stages(M: np.ndarray, x0: np.ndarray, t: float, substeps: int) -> np.ndarray:
    """Classical four-stage RK4 loop for ``x' = M x`` (batched, explicit stages)."""
    h = t / substeps
    x = x0.copy()
    f = lambda y: np.einsum("...ij,...j->...i", M, y)
    for _ in range(substeps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def rk4_matrix_power(M: np.ndarray, x0: np.ndarray, t: float, substeps: int) -> np.ndarray:
    """RK4 for a linear system, exactly: ``x_N = R(hM)^N x0`` with the RK4 stability
    polynomial ``R``; the power is taken by repeated squaring."""
    h = t / substeps
    m = M.shape[-1]
    hM = h * M
    eye = np.broadcast_to(np.eye(m), M.shape)
    h2 = hM @ hM
    h3 = h2 @ hM
    R = eye + hM + h2 / 2 + h3 / 6 + (h3 @ hM) / 24
    P = np.linalg.matrix_power(R, substeps)
    return np.einsum("...ij,...j->...i", P, x0)


def pack(u: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """(d, ...) and (ntri, ...) arrays -> (..., d + ntri)."""
    return np.moveaxis(np.concatenate([u, tau], axis=0), 0, -1)


def unpack(x: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.moveaxis(x, -1, 0)
    return x[:d], x[d:]


def propagate_modes_oracle(xi, u0, tau0, t, params: ModelParams, substeps: Optional[int] = None,
                           method: str = "power"):
    d = xi.shape[0]
    k2max = float(np.max(np.sum(xi * xi, axis=0)))
    if substeps is None:
        substeps = oracle_substeps(t, k2max, params)
    _check_stability(t, substeps, k2max, params)
    M = mode_matrix(xi, params)
    x0 = pack(u0, tau0)
    run = rk4_matrix_power if method == "power" else rk4_stages
    return unpack(run(M, x0, t, substeps), d)


def propagate_state_oracle(state0: FlowState, t: float, params: ModelParams,
                           substeps: Optional[int] = None, method: str = "power") -> FlowState:
    """Brute-force per-mode RK4 reference.  ``substeps`` defaults to the accuracy rule of
    :func:`oracle_substeps`; an explicit value must satisfy ``h eta k2max <= 0.5``."""
    if t == 0:
        return state0.with_fields(state0.u_hat.copy(), state0.tau_hat.copy())
    g = state0.grid
    if substeps is None:
        substeps = oracle_substeps(t, g.max_k2(False), params)
    _check_stability(t, substeps, g.max_k2(False), params)
    u, tau = propagate_modes_oracle(g.xi_vec, state0.u_hat, state0.tau_hat, t, params,
                                    substeps, method)
    return FlowState(g, state0.time + t, u, tau)


# --------------------------------------------------------------------------- bounds

def transverse_frame(d: int, xi_dir=None) -> tuple[np.ndarray, np.ndarray]:
    """A unit direction and a unit vector orthogonal to it."""
    e = np.zeros(d)
    e[0] = 1.0
    if xi_dir is not None:
        e = np.asarray(xi_dir, float) / np.linalg.norm(xi_dir)
    f = np.zeros(d)
    f[1] = 1.0
    f = f - e * (e @ f)
    if np.linalg.norm(f) < 1e-8:
        f = np.zeros(d)
        f[0] = 1.0
        f = f - e * (e @ f)
    return e, f / np.linalg.norm(f)


def mode_tensor_norm(tau: np.ndarray, d: int) -> np.ndarray:
    w = np.reshape(tri_weights(d), (-1,) + (1,) * (tau.ndim - 1))
    return np.sqrt(np.sum(w * np.abs(tau) ** 2, axis=0))


def lower_bound_ratio(u0: complex, Z0: complex, t_samples, kmag_samples,
                      params: ModelParams, d: int = 2, rest0: complex = 0.0) -> np.ndarray:
    """``(|u|+|tau|) e^{eta k^2 t} / (|u0|+|Z0|)`` on a (k, t) grid.

    Data at each radius: ``u0`` and ``Z0`` are amplitudes along one transverse unit
    vector; ``tau0 = S(Z0 f) + rest0 * f (x) f`` (the last term is a heat-only part).
    Returns an array of shape ``(len(kmag_samples), len(t_samples))``.
    """
    if abs(u0) == 0 and abs(Z0) == 0:
        raise ValueError("degenerate data: both u0 and Z0 vanish")
    ks = np.asarray(kmag_samples, float)
    ts = np.asarray(t_samples, float)
    e, f = transverse_frame(d)
    K, T = np.meshgrid(ks, ts, indexing="ij")
    xi = np.einsum("i,...->i...", e, K)
    fv = np.einsum("i,...->i...", f, np.ones_like(K))
    u_init = u0 * fv.astype(complex)
    tau_init = potential_stress(xi, Z0 * fv) + rest0 * np.stack(
        [fv[i] * fv[j] for i, j in tri_pairs(d)])
    out = np.empty(K.shape)
    for j, t in enumerate(ts):
        u, tau = linear_group_modes(xi[:, :, j], u_init[:, :, j], tau_init[:, :, j], t, params)
        num = np.sqrt(np.sum(np.abs(u) ** 2, axis=0)) + mode_tensor_norm(tau, d)
        out[:, j] = num * np.exp(params.eta * ks ** 2 * t)
    return out / (abs(u0) + abs(Z0))


def weighted_energy_ratio(u0: complex, Z0: complex, t_samples, kmag: float,
                          params: ModelParams) -> np.ndarray:
    """``(|u*|^2 + (2 nu1/nu2)|Z*|^2) / (|u0|^2 + |Z0|^2)`` with ``f* = e^{eta k^2 t/2} f``."""
    ts = np.asarray(t_samples, float)
    m = multipliers(ts, kmag, params)
    u = m.A * u0 + params.nu1 * m.B * Z0
    Z = -0.5 * params.nu2 * m.B * u0 - m.C * Z0
    comp = np.exp(0.5 * params.eta * kmag ** 2 * ts)
    num = np.abs(comp * u) ** 2 + 2 * params.nu1 / params.nu2 * np.abs(comp * Z) ** 2
    return num / (abs(u0) ** 2 + abs(Z0) ** 2)


@dataclass
class BoundFit:
    regime: str
    rate: float
    prefactor: float
    n_samples: int


def upper_bound_scan(state0: FlowState, t_grid: Sequence[float], params: ModelParams,
                     radius: float = 1.0, s_floor: float = 1.0) -> dict[str, BoundFit]:
    """Empirical constants of the per-mode bounds ``rho <= K exp(-C s)``.

    ``rho = (|u|+|tau|)/(|u0|+|tau0|)`` and ``s = |xi|^2 t`` for ``|xi| <= radius``,
    ``s = t`` above.  ``C`` is the largest rate with ``rho <= exp(-C s)`` on samples with
    ``s >= s_floor`` (all samples with the largest ``s`` if none qualify); ``K >= 1`` is
    then the smallest prefactor making the bound hold on the whole sweep.
    """
    ts = np.asarray(sorted(t_grid), float)
    if ts.size < 2 or ts[ts > 0].min() * 100 > ts.max():
        raise ValueError("t_grid must span at least two decades")
    g = state0.grid
    d = g.dim
    n0 = (np.sqrt(np.sum(np.abs(state0.u_hat) ** 2, axis=0))
          + mode_tensor_norm(state0.tau_hat, d))
    live = (n0 > 1e-300 * max(n0.max(), 1e-300)) & (g.k2 > 0) & (n0 > 0)
    rhos = []
    for t in ts:
        st = propagate_state_closed(state0, float(t), params)
        n = np.sqrt(np.sum(np.abs(st.u_hat) ** 2, axis=0)) + mode_tensor_norm(st.tau_hat, d)
        rhos.append(np.where(live, n / np.where(live, n0, 1.0), 0.0))
    rho = np.array(rhos)
    out = {}
    for regime, sel in (("low", live & (g.kmag <= radius)), ("high", live & (g.kmag > radius))):
        if not np.any(sel):
            continue
        r = np.maximum(rho[:, sel], 1e-300)
        s = np.broadcast_to(ts[:, None] * (g.k2[sel][None, :] if regime == "low" else 1.0),
                            r.shape)
        late = s >= min(s_floor, float(s.max()))
        C = max(float((-np.log(r[late]) / s[late]).min()), 0.0)
        K = max(1.0, float((r * np.exp(C * s)).max()))
        out[regime] = BoundFit(regime, C, K, int(sel.sum()))
    return out


# --------------------------------------------------------------------------- auxiliary fields

@dataclass
class AuxiliaryFields:
    v_hat: np.ndarray
    w_hat: np.ndarray
    Z_hat: np.ndarray
    W_hat: np.ndarray
    residuals: dict


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    den = max(np.abs(b).max(), np.abs(a).max(), 1e-300)
    return float(np.abs(a - b).max() / den)


def _inv_lap_grad(grid: SpectralGrid, f: np.ndarray) -> np.ndarray:
    """``grad (-Lap)^{-1} f`` for a vector field -> (d, d) with index order (i, j)."""
    return gradient(grid, lambda_power(grid, f, -2.0))


def aux_fields(state: FlowState) -> AuxiliaryFields:
    """Stress decomposition ``v, w``, potential ``Z`` and effective tensor ``W``."""
    g = state.grid
    d = g.dim
    zero = (slice(None),) + (0,) * d
    if np.any(state.tau_hat[zero] != 0):
        raise ValueError("stress has a nonzero mean; negative powers undefined")
    tf = state.tau_full()
    divt = div_tensor(g, tf)
    curl = curl_tensor(g, tf)
    v = lambda_power(g, divt, -1.0)
    w = lambda_power(g, curl, -1.0)
    Z = leray_project(g, v)
    W = _inv_lap_grad(g, 0.5 * state.u_hat + divt)
    # residuals
    recon = -lambda_power(g, gradient(g, v), -1.0) - lambda_power(
        g, np.stack([np.stack([sum(1j * g.xi[m] * w[i, j, m] for m in range(d))
                               for j in range(d)]) for i in range(d)]), -1.0)
    lapW = -g.k2 * W
    rhs1 = -gradient(g, 0.5 * state.u_hat + divt)
    rhs1[(slice(None), slice(None)) + (0,) * d] = 0
    ptau = leray_rows(g, tf)
    rhs2 = ptau - W + 0.5 * _inv_lap_grad(g, state.u_hat)
    res = {"reconstruction": _rel(recon, tf), "laplacian_W": _rel(lapW, rhs1),
           "stress_identity": _rel(rhs2, tf)}
    return AuxiliaryFields(v, w, Z, W, res)


def lyapunov_Lk(state: FlowState, k: int, cfg: DyadicConfig) -> float:
    """``sqrt(2|u_k|^2 + 2|v_k|^2 + |w_k|^2 + |Lambda u_k|^2 + 2<Lambda u_k, v_k>)``."""
    if k > cfg.k0:
        raise ValueError(f"band {k} above the split threshold {cfg.k0}")
    g = state.grid
    wk = cfg.weights(k)
    u = state.u_hat * wk
    tau = state.tau_hat * wk
    tf = sym_to_full(tau, g.dim)
    v = div_tensor(g, tf) * g.inv_kmag
    w = (curl_tensor(g, tf) * g.inv_kmag).reshape((-1,) + g.spec_shape)
    lu = u * g.kmag
    rad = (2 * l2_norm_spectral(g, u) ** 2 + 2 * l2_norm_spectral(g, v) ** 2
           + l2_norm_spectral(g, w) ** 2 + l2_norm_spectral(g, lu) ** 2
           + 2 * inner(g, lu, v))
    if rad < -1e-14 * max(1.0, abs(rad)):
        raise ArithmeticError(f"negative Lyapunov radicand {rad}")
    return float(np.sqrt(max(rad, 0.0)))


def effective_tensor(grid: SpectralGrid, u_hat: np.ndarray, tau_hat: np.ndarray) -> np.ndarray:
    tf = sym_to_full(tau_hat, grid.dim)
    return _inv_lap_grad(grid, 0.5 * u_hat + div_tensor(grid, tf))


def jk_functional(state: FlowState, k: int, gamma: float, p: float,
                  cfg: DyadicConfig) -> float:
    """``2 gamma |grad u_k|_p + gamma |P tau_k|_p + |W_k|_p`` (unweighted in time)."""
    if k < cfg.k0 - 1:
        raise ValueError(f"band {k} below k0 - 1 = {cfg.k0 - 1}")
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    g = state.grid
    d = g.dim
    wk = cfg.weights(k)
    u = state.u_hat * wk
    tau = state.tau_hat * wk
    gu = gradient(g, u).reshape((d * d,) + g.spec_shape)
    pt = leray_rows(g, sym_to_full(tau, d)).reshape((d * d,) + g.spec_shape)
    W = effective_tensor(g, u, tau).reshape((d * d,) + g.spec_shape)

    def norm(f):
        if p == 2:
            return l2_norm_spectral(g, f)
        return lp_norm_physical(g, to_physical(g, f), p)

    return 2 * gamma * norm(gu) + gamma * norm(pt) + norm(W)


def semilog_rate(t: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ``log(values)`` against ``t`` and its ``r^2``."""
    from scipy.stats import linregress
    fit = linregress(np.asarray(t, float), np.log(np.asarray(values, float)))
    return float(fit.slope), float(fit.rvalue ** 2)
