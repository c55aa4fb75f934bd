"""JSON/CSV persistence for pdfs, trajectories and sample sets.

Floats are written with ``repr`` precision so every round trip is exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .prob import DiscretePdf, Grid, SampleSet, Trajectory


def grid_to_dict(grid: Grid) -> dict:
    return {"num_digits": grid.num_digits, "num_bins": grid.num_bins, "lo": grid.lo, "hi": grid.hi}


def grid_from_dict(d: dict) -> Grid:
    return Grid(int(d["num_digits"]))


def pdf_to_dict(pdf: DiscretePdf, **extra) -> dict:
    out = {"grid": grid_to_dict(pdf.grid), "mass": [float(v) for v in pdf.mass]}
    out.update(extra)
    return out


def pdf_from_dict(d: dict) -> DiscretePdf:
    return DiscretePdf(grid_from_dict(d["grid"]), np.array(d["mass"], dtype=float))


def trajectory_to_dict(t: Trajectory) -> dict:
    return {
        "label": t.label,
        "grid": grid_to_dict(t.grid) if len(t) else None,
        "context_lengths": list(t.context_lengths),
        "pdfs": [[float(v) for v in p.mass] for p in t.pdfs],
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    grid = grid_from_dict(d["grid"]) if d.get("grid") else Grid()
    pdfs = tuple(DiscretePdf(grid, np.array(m, dtype=float)) for m in d["pdfs"])
    return Trajectory(tuple(d["context_lengths"]), pdfs, d.get("label", ""))


def samples_to_dict(s: SampleSet) -> dict:
    return {"grid": grid_to_dict(s.grid), "seed": s.seed, "bin_indices": [int(v) for v in s.bin_indices]}


def samples_from_dict(d: dict) -> SampleSet:
    return SampleSet(np.array(d["bin_indices"], dtype=np.int64), d.get("seed"), grid_from_dict(d["grid"]))


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_trajectories(path, trajectories) -> Path:
    return write_json(path, {"trajectories": [trajectory_to_dict(t) for t in trajectories]})


def read_trajectories(path) -> list[Trajectory]:
    obj = read_json(path)
    items = obj["trajectories"] if isinstance(obj, dict) and "trajectories" in obj else obj
    if isinstance(items, dict):
        items = [items]
    return [trajectory_from_dict(d) for d in items]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def trajectory_digest(t: Trajectory) -> str:
    return hashlib.sha256(dumps(trajectory_to_dict(t)).encode()).hexdigest()
