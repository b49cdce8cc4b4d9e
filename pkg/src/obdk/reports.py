"""
CSV/JSON writers and the run manifest.  Floats are written with 17 significant digits
so refits from files reproduce in-process fits exactly.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import sys
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) else v
                        for v in r])
    return path


def read_csv_columns(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


def write_series_csv(path: Path, t, values) -> Path:
    return write_csv(path, ["t", "value"], zip(np.asarray(t, float), np.asarray(values, float)))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=False))
    return path


def write_manifest(out_dir: Path, command: str, config_digest: str, raw_config: dict,
                   tolerances: dict, artifacts: Sequence[Path], status: int,
                   seed=None, workers: int = 1) -> Path:
    """Record everything needed to rerun: config hash and text, version, tolerances."""
    return write_json(Path(out_dir) / "manifest.json", {
        "command": command, "code_version": __version__, "config_sha256": config_digest,
        "config": raw_config, "seed": seed, "workers": workers, "tolerances": tolerances,
        "exit_status": status, "artifacts": [str(Path(a).name) for a in artifacts],
        "python": sys.version.split()[0], "numpy": np.__version__,
        "platform": platform.platform(), "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })
