"""
Periodic-box spectral representation for the inviscid, undamped Oldroyd-B system.

Conventions (fixed, used everywhere in the package):

* Fields are stored in the real-transform layout of ``scipy.fft.rfftn`` over the
  last ``d`` axes; the spectral shape is ``(n,)*(d-1) + (n//2 + 1,)``.
* The forward transform carries ``1/n**d`` so spectral entries are Fourier-series
  coefficients: ``f(x) = sum_xi f_hat(xi) exp(i xi.x)``.
* ``L^2`` norms are taken over the box, ``||f||^2 = int_box |f|^2 dx``, which in
  spectral variables reads ``L**d * sum_xi |f_hat(xi)|^2`` (full spectrum).
* Vectors carry a leading component axis of length ``d``.  Symmetric tensors
  store only the upper triangle, row-major: for d=2 ``(11, 12, 22)``, for d=3
  ``(11, 12, 13, 22, 23, 33)``.
* Gradients follow ``(grad u)_{ij} = d_j u^i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.fft as sfft


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Physical coefficients of the system plus the Lebesgue index ``p``."""

    nu1: float = 1.0
    nu2: float = 1.0
    eta: float = 1.0
    q_slip: float = 1.0
    dim: int = 2
    p_index: float = 2.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dim}")
        for name in ("nu1", "nu2", "eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not -1.0 <= self.q_slip <= 1.0:
            raise ValueError(f"q_slip (b) must lie in [-1, 1], got {self.q_slip}")
        check_p_index(self.p_index, self.dim)

    @property
    def normalized(self) -> bool:
        return self.eta == 1.0 and self.nu1 == 1.0 and self.nu2 == 1.0


def check_p_index(p: float, d: int) -> None:
    """Raise unless ``2 <= p <= min(4, 2d/(d-2))`` and ``p != 4`` when ``d == 2``."""
    upper = 4.0 if d == 2 else min(4.0, 2.0 * d / (d - 2))
    if not 2.0 <= p <= upper:
        raise ValueError(f"p={p} violates 2 <= p <= min(4, 2d/(d-2)) = {upper} for d={d}")
    if d == 2 and p == 4.0:
        raise ValueError("p=4 with d=2 excluded (borderline product law)")


def ntri(d: int) -> int:
    return d * (d + 1) // 2


def tri_pairs(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i, d)]


def tri_index(d: int) -> np.ndarray:
    """Map (i, j) -> position in the upper-triangle storage."""
    idx = np.empty((d, d), dtype=int)
    for c, (i, j) in enumerate(tri_pairs(d)):
        idx[i, j] = idx[j, i] = c
    return idx


def tri_weights(d: int) -> np.ndarray:
    """Frobenius weights of the stored components (off-diagonals count twice)."""
    return np.array([1.0 if i == j else 2.0 for i, j in tri_pairs(d)])


def sym_to_full(t: np.ndarray, d: int) -> np.ndarray:
    idx = tri_index(d)
    return t[idx]


def full_to_sym(t: np.ndarray, d: int) -> np.ndarray:
    return np.stack([t[i, j] for i, j in tri_pairs(d)])


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """Wavenumber lattice of the periodic box ``[0, L)^d`` with ``n`` modes per axis."""

    dim: int
    n: int
    box_length: float
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise GridError(f"dimension must be 2 or 3, got {self.dim}")
        if self.n % 2 or self.n < 8:
            raise GridError(f"n must be even and >= 8, got {self.n}")
        if not self.box_length > 0:
            raise GridError(f"box length must be > 0, got {self.box_length}")
        if not 0 < self.dealias_fraction <= 1:
            raise GridError(f"dealias fraction must lie in (0, 1], got {self.dealias_fraction}")

    @property
    def k_min(self) -> float:
        return 2.0 * np.pi / self.box_length

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def spec_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @property
    def volume(self) -> float:
        return self.box_length ** self.dim

    @property
    def signature(self) -> tuple[int, int, float]:
        return (self.dim, self.n, float(self.box_length))

    @cached_property
    def mode_index(self) -> list[np.ndarray]:
        """Integer mode numbers per axis, broadcastable to ``spec_shape``."""
        d, n = self.dim, self.n
        out = []
        for ax in range(d):
            if ax < d - 1:
                m = np.fft.fftfreq(n, 1.0 / n)
            else:
                m = np.arange(n // 2 + 1, dtype=float)
            shp = [1] * d
            shp[ax] = m.size
            out.append(m.reshape(shp))
        return out

    @cached_property
    def xi(self) -> list[np.ndarray]:
        """Wavenumber components, each broadcastable to ``spec_shape``."""
        return [self.k_min * m for m in self.mode_index]

    @cached_property
    def k2(self) -> np.ndarray:
        out = np.zeros(self.spec_shape)
        for k in self.xi:
            out = out + k * k
        return out

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def inv_kmag(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            out = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.kmag, 1.0), 0.0)
        return out

    @cached_property
    def xi_vec(self) -> np.ndarray:
        return np.stack([np.broadcast_to(k, self.spec_shape) for k in self.xi])

    @cached_property
    def hermitian_weight(self) -> np.ndarray:
        """Multiplicity of each stored mode in the full spectrum."""
        w = np.full(self.spec_shape, 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        return w

    @cached_property
    def nyquist_free(self) -> np.ndarray:
        keep = np.ones(self.spec_shape, dtype=bool)
        for m in self.mode_index:
            keep &= np.abs(m) < self.n // 2
        return keep

    @property
    def dealias_cutoff_index(self) -> float:
        return self.dealias_fraction * self.n / 2

    @property
    def dealias_cutoff(self) -> float:
        return self.dealias_cutoff_index * self.k_min

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = self.nyquist_free.copy()
        for m in self.mode_index:
            keep &= np.abs(m) <= self.dealias_cutoff_index
        return keep

    def axis_wavenumbers(self) -> np.ndarray:
        """Sorted wavenumbers of one full axis, ``-n/2 .. n/2-1`` times ``k_min``."""
        return self.k_min * np.arange(-self.n // 2, self.n // 2)

    def coords(self) -> list[np.ndarray]:
        x = np.arange(self.n) * self.box_length / self.n
        return np.meshgrid(*([x] * self.dim), indexing="ij")

    def max_k2(self, dealiased: bool = True) -> float:
        mask = self.dealias_mask if dealiased else np.ones(self.spec_shape, bool)
        return float(self.k2[mask].max())


def create_grid(d: int, n: int, L: float, dealias_fraction: float = 2.0 / 3.0) -> SpectralGrid:
    return SpectralGrid(d, n, float(L), dealias_fraction)


# --------------------------------------------------------------------------- transforms

def _check_shape(grid: SpectralGrid, arr: np.ndarray, spectral: bool) -> None:
    want = grid.spec_shape if spectral else grid.shape
    if arr.shape[arr.ndim - grid.dim:] != want:
        kind = "spectral" if spectral else "physical"
        raise GridError(f"{kind} shape {arr.shape} does not end with {want}")


def to_physical(grid: SpectralGrid, f_hat: np.ndarray) -> np.ndarray:
    _check_shape(grid, f_hat, True)
    axes = tuple(range(f_hat.ndim - grid.dim, f_hat.ndim))
    return sfft.irfftn(f_hat, s=grid.shape, axes=axes, norm="forward")


def to_spectral(grid: SpectralGrid, f: np.ndarray) -> np.ndarray:
    _check_shape(grid, f, False)
    axes = tuple(range(f.ndim - grid.dim, f.ndim))
    return sfft.rfftn(f, axes=axes, norm="forward")


# --------------------------------------------------------------------------- norms

def l2_norm_spectral(grid: SpectralGrid, f_hat: np.ndarray, weights=None) -> float:
    """Box ``L^2`` norm; ``weights`` scales the leading component axis (tensors)."""
    e = np.abs(f_hat) ** 2 * grid.hermitian_weight
    if weights is not None:
        e = e * np.reshape(weights, (-1,) + (1,) * grid.dim)
    return float(np.sqrt(grid.volume * e.sum()))


def l2_norm_physical(grid: SpectralGrid, f: np.ndarray, weights=None) -> float:
    e = f * f
    if weights is not None:
        e = e * np.reshape(weights, (-1,) + (1,) * grid.dim)
    return float(np.sqrt(e.sum() * grid.volume / f.shape[-1] ** grid.dim))


def lp_norm_physical(grid: SpectralGrid, f: np.ndarray, p: float, weights=None) -> float:
    """``L^p`` norm of the pointwise Euclidean/Frobenius magnitude."""
    if f.ndim > grid.dim:
        e = f * f
        if weights is not None:
            e = e * np.reshape(weights, (-1,) + (1,) * grid.dim)
        mag = np.sqrt(e.sum(axis=0))
    else:
        mag = np.abs(f)
    if np.isinf(p):
        return float(mag.max())
    cell = grid.volume / mag.size
    return float((np.sum(mag ** p) * cell) ** (1.0 / p))


def inner(grid: SpectralGrid, f_hat: np.ndarray, g_hat: np.ndarray, weights=None) -> float:
    """Real ``L^2`` inner product over the box."""
    e = (f_hat * np.conj(g_hat)).real * grid.hermitian_weight
    if weights is not None:
        e = e * np.reshape(weights, (-1,) + (1,) * grid.dim)
    return float(grid.volume * e.sum())


# --------------------------------------------------------------------------- operators

def leray_project(grid: SpectralGrid, v_hat: np.ndarray) -> np.ndarray:
    """Per-mode projection ``v - xi (xi.v)/|xi|^2``; the zero mode passes through."""
    xi = grid.xi
    div = sum(xi[j] * v_hat[j] for j in range(grid.dim))
    with np.errstate(invalid="ignore", divide="ignore"):
        fac = np.where(grid.k2 > 0, div / np.where(grid.k2 > 0, grid.k2, 1.0), 0.0)
    return np.stack([v_hat[i] - xi[i] * fac for i in range(grid.dim)])


def lambda_power(grid: SpectralGrid, f_hat: np.ndarray, s: float) -> np.ndarray:
    """Multiply by ``|xi|^s``; output zero mode is 0 for ``s != 0``."""
    if s == 0:
        return f_hat.copy()
    zero = (0,) * grid.dim
    if s < 0 and np.any(np.abs(f_hat[(...,) + zero]) > 0):
        raise ValueError("negative power of Lambda applied to a field with nonzero mean")
    with np.errstate(divide="ignore"):
        mult = np.where(grid.k2 > 0, np.where(grid.k2 > 0, grid.kmag, 1.0) ** s, 0.0)
    return f_hat * mult


def inv_neg_laplacian(grid: SpectralGrid, f_hat: np.ndarray) -> np.ndarray:
    return lambda_power(grid, f_hat, -2.0)


def divergence(grid: SpectralGrid, v_hat: np.ndarray) -> np.ndarray:
    return sum(1j * grid.xi[j] * v_hat[j] for j in range(grid.dim))


def gradient(grid: SpectralGrid, f_hat: np.ndarray) -> np.ndarray:
    """Scalar -> vector, vector -> matrix with ``(grad u)_{ij} = i xi_j u^i``."""
    xi = grid.xi
    if f_hat.ndim == grid.dim:
        return np.stack([1j * k * f_hat for k in xi])
    return np.stack([np.stack([1j * xi[j] * f_hat[i] for j in range(grid.dim)])
                     for i in range(f_hat.shape[0])])


def strain(grad_u: np.ndarray) -> np.ndarray:
    return 0.5 * (grad_u + np.swapaxes(grad_u, 0, 1))


def rotation(grad_u: np.ndarray) -> np.ndarray:
    return 0.5 * (grad_u - np.swapaxes(grad_u, 0, 1))


def div_tensor(grid: SpectralGrid, t_full: np.ndarray) -> np.ndarray:
    """``[div tau]^i = i xi_j tau^{ij}`` for a full (d, d, ...) tensor."""
    xi = grid.xi
    return np.stack([sum(1j * xi[j] * t_full[i, j] for j in range(grid.dim))
                     for i in range(grid.dim)])


def div_sym(grid: SpectralGrid, tau_hat: np.ndarray) -> np.ndarray:
    return div_tensor(grid, sym_to_full(tau_hat, grid.dim))


def curl_tensor(grid: SpectralGrid, t_full: np.ndarray) -> np.ndarray:
    """``[curl tau]^{i,j,m} = i xi_m tau^{ij} - i xi_j tau^{im}``."""
    d, xi = grid.dim, grid.xi
    out = np.empty((d, d, d) + grid.spec_shape, dtype=complex)
    for i in range(d):
        for j in range(d):
            for m in range(d):
                out[i, j, m] = 1j * xi[m] * t_full[i, j] - 1j * xi[j] * t_full[i, m]
    return out


def div3(grid: SpectralGrid, w: np.ndarray) -> np.ndarray:
    """``[div w]^{i,j} = i xi_m w^{i,j,m}``."""
    d, xi = grid.dim, grid.xi
    return np.stack([np.stack([sum(1j * xi[m] * w[i, j, m] for m in range(d))
                               for j in range(d)]) for i in range(d)])


def leray_rows(grid: SpectralGrid, t_full: np.ndarray) -> np.ndarray:
    """Leray projection of each row ``tau^{i, .}`` (projection acting on the second index)."""
    d = grid.dim
    return np.stack([leray_project(grid, t_full[i]) for i in range(d)])


def tensor_calculus(grid: SpectralGrid, u_hat: np.ndarray, tau_hat: np.ndarray) -> dict:
    """All first-order differential objects of a state, in spectral variables."""
    d = grid.dim
    tf = sym_to_full(tau_hat, d)
    gu = gradient(grid, u_hat)
    curl = curl_tensor(grid, tf)
    return {
        "div_tau": div_tensor(grid, tf),
        "grad_u": gu,
        "D": strain(gu),
        "Omega": rotation(gu),
        "curl_tau": curl,
        "div_curl_tau": div3(grid, curl),
    }


def dealias(grid: SpectralGrid, f_hat: np.ndarray) -> np.ndarray:
    return f_hat * grid.dealias_mask


def zero_nyquist(grid: SpectralGrid, f_hat: np.ndarray) -> np.ndarray:
    return f_hat * grid.nyquist_free


def divergence_residual(grid: SpectralGrid, u_hat: np.ndarray) -> float:
    """``||xi . u_hat|| / ||u_hat||`` with the divergence measured per unit wavenumber."""
    nu = l2_norm_spectral(grid, u_hat)
    if nu == 0:
        return 0.0
    dv = sum(grid.xi[j] * u_hat[j] for j in range(grid.dim)) * grid.inv_kmag
    return l2_norm_spectral(grid, dv) / nu


# --------------------------------------------------------------------------- state

@dataclass(frozen=True, eq=False)
class FlowState:
    """Velocity and stress of one snapshot, in spectral variables."""

    grid: SpectralGrid
    time: float
    u_hat: np.ndarray
    tau_hat: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = self.grid.dim
        if self.u_hat.shape != (d,) + self.grid.spec_shape:
            raise GridError(f"u_hat shape {self.u_hat.shape} != {(d,) + self.grid.spec_shape}")
        if self.tau_hat.shape != (ntri(d),) + self.grid.spec_shape:
            raise GridError(f"tau_hat shape {self.tau_hat.shape} != "
                            f"{(ntri(d),) + self.grid.spec_shape}")
        if self.time < 0:
            raise ValueError(f"time must be >= 0, got {self.time}")

    @property
    def dim(self) -> int:
        return self.grid.dim

    def tau_full(self) -> np.ndarray:
        return sym_to_full(self.tau_hat, self.dim)

    def divergence_residual(self) -> float:
        return divergence_residual(self.grid, self.u_hat)

    def with_fields(self, u_hat, tau_hat, time: Optional[float] = None) -> "FlowState":
        return FlowState(self.grid, self.time if time is None else time, u_hat, tau_hat)

    def __sub__(self, other: "FlowState") -> "FlowState":
        return FlowState(self.grid, self.time, self.u_hat - other.u_hat,
                         self.tau_hat - other.tau_hat)

    def norm(self) -> float:
        g = self.grid
        return float(np.hypot(l2_norm_spectral(g, self.u_hat),
                              l2_norm_spectral(g, self.tau_hat, tri_weights(self.dim))))

    def validate(self, tol: float = 1e-10) -> None:
        zero = (slice(None),) + (0,) * self.dim
        if np.any(self.u_hat[zero] != 0):
            raise ValueError("velocity has a nonzero mean")
        r = self.divergence_residual()
        if r > tol:
            raise ValueError(f"divergence residual {r:.3e} exceeds {tol:.0e}")


def zero_state(grid: SpectralGrid, time: float = 0.0) -> FlowState:
    d = grid.dim
    return FlowState(grid, time, np.zeros((d,) + grid.spec_shape, complex),
                     np.zeros((ntri(d),) + grid.spec_shape, complex))


def random_state(grid: SpectralGrid, rng: np.random.Generator, amplitude: float = 1.0,
                 mean_free_tau: bool = True, spectral_slope: float = 0.0) -> FlowState:
    """Random divergence-free velocity and symmetric stress, dealiased, real-valued.

    ``spectral_slope`` multiplies every mode by ``(1 + |xi|)**(-spectral_slope)``.
    """
    d = grid.dim
    u = to_spectral(grid, rng.standard_normal((d,) + grid.shape))
    t = to_spectral(grid, rng.standard_normal((ntri(d),) + grid.shape))
    taper = (1.0 + grid.kmag) ** (-spectral_slope) * grid.dealias_mask
    u = leray_project(grid, u * taper)
    t = t * taper
    zero = (slice(None),) + (0,) * d
    u[zero] = 0
    if mean_free_tau:
        t[zero] = 0
    s = FlowState(grid, 0.0, u, t)
    scale = amplitude / max(s.norm(), 1e-300)
    return FlowState(grid, 0.0, u * scale, t * scale)
