"""
Binary snapshot checkpoints.

Layout (little-endian), one record per snapshot::

    magic   4s   b"OBDK"
    version u32
    d       u32
    n       u32
    L       f64
    t       f64
    params  6 x f64   nu1, nu2, eta, q_slip, p, dealias_fraction
    u_hat   complex128[d, *spec_shape]        C order
    tau_hat complex128[d(d+1)/2, *spec_shape] C order, upper-triangular (i <= j) row-major

``spec_shape`` is ``(n,)*(d-1) + (n//2+1,)`` (real-FFT half spectrum on the last axis).
A series file is a plain concatenation of records.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np

from .spectral import FlowState, GridError, ModelParams, SpectralGrid, create_grid, ntri

MAGIC = b"OBDK"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd6d")
_DTYPE = np.dtype("<c16")


class CheckpointError(ValueError):
    pass


def _header_bytes(state: FlowState, params: ModelParams) -> bytes:
    g = state.grid
    return _HEADER.pack(MAGIC, VERSION, g.dim, g.n, float(g.box_length), float(state.time),
                        params.nu1, params.nu2, params.eta, params.q_slip, params.p_index,
                        float(g.dealias_fraction))


def write_state(fh: BinaryIO, state: FlowState, params: ModelParams) -> None:
    if params.dim != state.dim:
        raise CheckpointError(f"params dimension {params.dim} != state dimension {state.dim}")
    fh.write(_header_bytes(state, params))
    fh.write(np.ascontiguousarray(state.u_hat, dtype=_DTYPE).tobytes())
    fh.write(np.ascontiguousarray(state.tau_hat, dtype=_DTYPE).tobytes())


def _read_exact(fh: BinaryIO, nbytes: int, what: str) -> bytes:
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise CheckpointError(f"truncated checkpoint: {what} needs {nbytes} bytes, "
                              f"got {len(buf)} (missing {nbytes - len(buf)})")
    return buf


def read_state(fh: BinaryIO, grid: Optional[SpectralGrid] = None
               ) -> Optional[tuple[FlowState, ModelParams]]:
    """Read one record; returns ``None`` at a clean end of file."""
    first = fh.read(_HEADER.size)
    if not first:
        return None
    if len(first) < _HEADER.size:
        raise CheckpointError(f"truncated checkpoint: header needs {_HEADER.size} bytes, "
                              f"got {len(first)} (missing {_HEADER.size - len(first)})")
    magic, version, d, n, L, t, nu1, nu2, eta, b, p, frac = _HEADER.unpack(first)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version mismatch: found {version}, expected {VERSION}")
    found = create_grid(d, n, L, dealias_fraction=frac)
    if grid is not None and grid.signature != found.signature:
        raise GridError(f"grid mismatch: checkpoint {found.signature} vs expected {grid.signature}")
    g = grid or found
    params = ModelParams(nu1, nu2, eta, b, d, p)
    nu = d * int(np.prod(g.spec_shape))
    nt = ntri(d) * int(np.prod(g.spec_shape))
    u = np.frombuffer(_read_exact(fh, nu * 16, "u_hat"), dtype=_DTYPE)
    tau = np.frombuffer(_read_exact(fh, nt * 16, "tau_hat"), dtype=_DTYPE)
    state = FlowState(g, t, u.reshape((d,) + g.spec_shape).astype(complex),
                      tau.reshape((ntri(d),) + g.spec_shape).astype(complex))
    return state, params


def save_checkpoint(path: Union[str, Path], states: Union[FlowState, Sequence[FlowState]],
                    params: ModelParams) -> Path:
    path = Path(path)
    seq = [states] if isinstance(states, FlowState) else list(states)
    with open(path, "wb") as fh:
        for st in seq:
            write_state(fh, st, params)
    return path


def load_series(path: Union[str, Path], grid: Optional[SpectralGrid] = None
                ) -> tuple[list[FlowState], ModelParams]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    states, params = [], None
    with open(path, "rb") as fh:
        while True:
            rec = read_state(fh, grid)
            if rec is None:
                break
            st, params = rec
            grid = st.grid
            states.append(st)
    if not states:
        raise CheckpointError(f"empty checkpoint file: {path}")
    return states, params


def load_checkpoint(path: Union[str, Path], grid: Optional[SpectralGrid] = None
                    ) -> tuple[FlowState, ModelParams]:
    """Load the last record of a checkpoint file."""
    states, params = load_series(path, grid)
    return states[-1], params
