"""
Figures for decay experiments (Agg backend, written to files only).
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import bracket  # noqa: E402


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_decay(path: Path, series: dict, sigma1: float, window: Optional[Sequence[float]] = None,
               title: str = "low-frequency decay", reference: bool = True) -> Path:
    """Log-log norms per sigma, with dashed ``<t>^{-(sigma - sigma1)/2}`` guides."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for s, ser in series.items():
        t, v = np.asarray(ser.t), np.asarray(ser.values)
        ok = (t > 0) & (v > 0)
        line, = ax.loglog(t[ok], v[ok], label=fr"$\sigma={s:g}$")
        if reference and ok.any():
            rate = 0.5 * (s - sigma1)
            anchor = np.argmax(ok)
            guide = v[anchor] * (bracket(t[ok]) / bracket(t[anchor])) ** (-rate)
            ax.loglog(t[ok], guide, "--", color=line.get_color(), lw=0.8)
    if window is not None:
        ax.axvspan(window[0], window[1], color="0.9", zorder=0)
    ax.set_xlabel("t")
    ax.set_ylabel("norm")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_compensated(path: Path, series: dict, sigma1: float,
                     window: Optional[Sequence[float]] = None) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for s, ser in series.items():
        t, v = np.asarray(ser.t), np.asarray(ser.values)
        c = v * bracket(t) ** (0.5 * (s - sigma1))
        ax.loglog(t[t > 0], c[t > 0], label=fr"$\sigma={s:g}$")
    if window is not None:
        ax.axvspan(window[0], window[1], color="0.9", zorder=0)
    ax.set_xlabel("t")
    ax.set_ylabel(r"norm $\cdot\langle t\rangle^{(\sigma-\sigma_1)/2}$")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_energy(path: Path, t, energy, E0: float) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.plot(t, np.asarray(energy) / E0 if E0 else energy)
    ax.axhline(2.0, color="k", ls=":", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$E(t)/E_0$")
    return _save(fig, path)


def plot_bands(path: Path, bands: Sequence[int], norms: Sequence[float], title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.semilogy(bands, norms, "o-")
    ax.set_xlabel("band k")
    ax.set_ylabel("weighted band norm")
    ax.set_title(title)
    return _save(fig, path)


def plot_sweep(path: Path, table) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    arr = np.array(table, float)
    for t in np.unique(arr[:, 2]):
        sel = arr[:, 2] == t
        ax.loglog(arr[sel, 1], np.maximum(arr[sel, 3], 1e-18), "o", label=f"t={t:g}")
    ax.axhline(1e-8, color="k", ls=":", lw=0.8)
    ax.set_xlabel(r"$|\xi|$")
    ax.set_ylabel("relative error vs oracle")
    ax.legend(fontsize=8)
    return _save(fig, path)
