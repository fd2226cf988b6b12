"""File output: time series, sweep tables, Q-grid snapshots and run manifests.

All numbers are written with explicit format specifications, which are
locale independent.

Snapshot formats
----------------
Text::

    # qgrid 1
    nx ny
    x_min x_max y_min y_max
    time
    params_hash
    <nx rows of ny values>

Binary (little endian)::

    4s    magic b"QGRD"
    u32   version (1)
    u32   nx, u32 ny
    f64   x_min, x_max, y_min, y_max, time
    16s   params_hash (ASCII hex)
    f64   nx * ny values, row major (x index slowest)
"""

from __future__ import annotations

import hashlib
import json
import platform
import struct
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .qfunc import GridGeometry, QGrid

TIMESERIES_COLUMNS = ("t", "energy", "stderr", "q_mean", "p_mean", "Vqq", "Vqp", "Vpp",
                      "analytic_gaussian", "analytic_ss")
DECIMALS = 12
SNAPSHOT_MAGIC = b"QGRD"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIII5d16s")


def _fmt(v: float, decimals: int = DECIMALS) -> str:
    return format(float(v), f".{decimals}f")


def params_hash(data: dict) -> str:
    """16 hex digits identifying a resolved configuration."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_table(path, header, columns, decimals: int = DECIMALS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [np.asarray(c) for c in columns]
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in zip(*cols):
            f.write(",".join(v if isinstance(v, str) else _fmt(v, decimals) for v in row) + "\n")
    return path


def read_table(path) -> dict:
    """Columns of a file written by :func:`write_table` (numeric where possible)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:] if ln]
    out = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in rows]
        try:
            out[name] = np.array([float(v) for v in vals])
        except ValueError:
            out[name] = vals
    return out


def emit_timeseries(result, path) -> Path:
    """Write an EnsembleResult as one row per output time."""
    m = result.mean_moments
    ss = np.full(len(result.times), result.analytic_ss)
    cols = [result.times, result.mean_energy, result.stderr, m[:, 0], m[:, 1], m[:, 2],
            m[:, 3], m[:, 4], result.analytic_gaussian, ss]
    return write_table(path, TIMESERIES_COLUMNS, cols)


def read_timeseries(path) -> dict:
    return read_table(path)


def emit_trajectory(result, index: int, path) -> Path:
    """Energy and moments of one member of an ensemble."""
    tr = result.trajectories[index]
    cols = [result.times, tr[:, 0], tr[:, 1], tr[:, 2], tr[:, 3], tr[:, 4], tr[:, 5]]
    return write_table(path, ("t", "energy", "q_mean", "p_mean", "Vqq", "Vqp", "Vpp"), cols)


def emit_sweep(table, path) -> Path:
    cols = [table.column("value"), table.column("analytic"), table.column("simulated"),
            table.column("stderr"), [r.flag or "ok" for r in table.rows]]
    return write_table(path, (table.param, "analytic", "simulated", "stderr", "flag"), cols)


def emit_snapshot(grid: QGrid, path, phash: str, binary: bool = False) -> Path:
    """Write a Q grid with its time stamp and the run's parameter hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = grid.geometry
    h = phash.encode("ascii")[:16].ljust(16, b"0")
    if binary:
        head = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.nx, g.ny, g.x_min, g.x_max,
                            g.y_min, g.y_max, grid.time, h)
        path.write_bytes(head + np.ascontiguousarray(grid.values, dtype="<f8").tobytes())
        return path
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(f"# qgrid {SNAPSHOT_VERSION}\n{g.nx} {g.ny}\n")
        f.write(" ".join(format(v, ".17g") for v in (g.x_min, g.x_max, g.y_min, g.y_max)) + "\n")
        f.write(format(grid.time, ".17g") + "\n" + h.decode() + "\n")
        for row in grid.values:
            f.write(" ".join(format(v, ".17g") for v in row) + "\n")
    return path


def read_snapshot(path) -> tuple[QGrid, str]:
    """Decode either snapshot variant; returns the grid and parameter hash."""
    raw = Path(path).read_bytes()
    if raw[:4] == SNAPSHOT_MAGIC:
        magic, ver, nx, ny, x0, x1, y0, y1, t, h = _HEADER.unpack_from(raw)
        if ver != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {ver}")
        vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=nx * ny)
        geom = GridGeometry(nx, ny, x0, x1, y0, y1)
        return QGrid(vals.reshape(nx, ny).copy(), geom, t), h.decode("ascii")
    lines = raw.decode("utf-8").splitlines()
    if not lines[0].startswith("# qgrid"):
        raise ValueError(f"{path} is not a Q-grid snapshot")
    nx, ny = (int(v) for v in lines[1].split())
    x0, x1, y0, y1 = (float(v) for v in lines[2].split())
    t = float(lines[3])
    h = lines[4].strip()
    vals = np.array([[float(v) for v in ln.split()] for ln in lines[5:5 + nx]])
    return QGrid(vals, GridGeometry(nx, ny, x0, x1, y0, y1), t), h


def write_manifest(out_dir, config: dict, files, extra: dict | None = None) -> Path:
    """Resolved configuration, seed and code version for an output directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = {
        "config": config,
        "params_hash": params_hash(config),
        "seed": config.get("seed"),
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "files": sorted(str(Path(f).relative_to(out_dir)) for f in files),
    }
    if extra:
        data.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
