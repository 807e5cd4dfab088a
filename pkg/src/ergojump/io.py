"""Plain CSV/JSON output, written atomically (temp file + rename)."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import PolicyField, ValueField
from .sim import OccupationHistogram, Trajectory
from .solver import TruncationSweepResult


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _coord_header(d: int) -> list[str]:
    return [f"x_{i + 1}" for i in range(d)]


def write_trajectory(path, traj: Trajectory) -> Path:
    d = traj.states.shape[1]
    rows = (
        (t, *x, int(k), c)
        for t, x, k, c in zip(traj.times, traj.states, traj.controls, traj.cost_integral)
    )
    return write_csv(path, ["t", *_coord_header(d), "u_index", "cumulative_cost"], rows)


def write_histogram(path, hist: OccupationHistogram) -> Path:
    """Cell centres and masses. The escaped mass is not a cell; callers record it in the manifest."""
    rows = ((*x, m) for x, m in zip(hist.cell_centers, hist.cell_masses))
    return write_csv(path, [*_coord_header(hist.grid.d), "mass"], rows)


def write_field(path, value: ValueField, policy: PolicyField | None = None) -> Path:
    grid = value.grid
    hdr = [*_coord_header(grid.d), "value"]
    if policy is None:
        rows = ((*x, v) for x, v in zip(grid.nodes, value.values))
    else:
        hdr.append("control_index")
        rows = ((*x, v, int(k)) for x, v, k in zip(grid.nodes, value.values, policy.indices))
    return write_csv(path, hdr, rows)


def write_sweep(path, sweep: TruncationSweepResult) -> Path:
    return write_csv(path, ["R", "rho"], zip(sweep.radii, sweep.values))
