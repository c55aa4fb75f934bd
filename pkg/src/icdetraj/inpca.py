"""Intensive PCA: classical-MDS embedding of distributions under squared Hellinger.

The same machinery embeds whole trajectories (meta-InPCA, using summed
pointwise Hellinger distances) and the plain squared-L2 baseline.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .prob import DiscretePdf, Trajectory

METRICS = ("hellinger-squared", "l2-squared")
# eigenvalues below this fraction of the largest are treated as zero
RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric matrix of squared distances with zero diagonal."""

    entries: np.ndarray
    metric: str = "hellinger-squared"

    def __post_init__(self):
        d = np.array(self.entries, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DimensionError(f"distance matrix must be square, got {d.shape}")
        if not np.array_equal(d, d.T):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(d) != 0) or np.any(d < 0):
            raise ValueError("distance matrix needs a zero diagonal and non-negative entries")
        d.setflags(write=False)
        object.__setattr__(self, "entries", d)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class Embedding:
    coords: np.ndarray
    eigenvalues: np.ndarray
    explained: np.ndarray
    point_labels: tuple = ()
    eigenvectors: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.coords.shape[1]

    def to_csv(self, dims: int | None = None) -> str:
        d = self.rank if dims is None else min(dims, self.rank)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label"] + [f"coord_{k + 1}" for k in range(d)])
        labels = self.point_labels or [str(i) for i in range(self.coords.shape[0])]
        for lab, row in zip(labels, self.coords[:, :d]):
            w.writerow([lab] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "labels": list(self.point_labels),
                "eigenvalues": [float(v) for v in self.eigenvalues],
                "explained": [float(v) for v in self.explained],
                "coords": [[float(v) for v in row] for row in self.coords],
            },
            indent=1,
        )


def _sq_roots(pdfs: Sequence[DiscretePdf]) -> np.ndarray:
    grid = pdfs[0].grid
    if any(p.grid != grid for p in pdfs):
        raise DimensionError("pdfs live on different grids")
    return np.sqrt(np.stack([p.mass for p in pdfs]))


def _symmetric_sq_distances(x: np.ndarray, scale: float) -> np.ndarray:
    m = x.shape[0]
    out = np.zeros((m, m))
    for i in range(m):
        diff = x[i + 1 :] - x[i]
        out[i, i + 1 :] = scale * np.einsum("ij,ij->i", diff, diff)
    out = out + out.T
    return out


def pairwise_distances(pdfs: Sequence[DiscretePdf], metric: str = "hellinger-squared") -> DistanceMatrix:
    """Squared Hellinger (``1 - BC``) or squared L2 distances between all pairs."""
    if len(pdfs) < 2:
        raise ValueError("need at least two pdfs")
    if metric == "hellinger-squared":
        d = np.clip(_symmetric_sq_distances(_sq_roots(pdfs), 0.5), 0.0, 1.0)
    elif metric == "l2-squared":
        grid = pdfs[0].grid
        if any(p.grid != grid for p in pdfs):
            raise DimensionError("pdfs live on different grids")
        d = _symmetric_sq_distances(np.stack([p.mass for p in pdfs]), 1.0)
    else:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    return DistanceMatrix(d, metric)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    vecs = vecs.copy()
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            vecs[:, k] = -col
    return vecs


def centered_gram(d: np.ndarray) -> np.ndarray:
    """``W = -1/2 L D L`` with ``L = I - 1/m``."""
    # L D L without forming L: subtract row and column means, add grand mean
    row = d.mean(axis=1, keepdims=True)
    col = d.mean(axis=0, keepdims=True)
    w = -0.5 * (d - row - col + d.mean())
    return 0.5 * (w + w.T)


def inpca_embed(dm: DistanceMatrix, labels: Sequence[str] = ()) -> Embedding:
    """Embed points so Euclidean distances reproduce the square roots of ``dm``.

    Coordinates use only the positive part of the spectrum; negative
    eigenvalues are kept in ``eigenvalues`` and in the explained-variance
    denominator.
    """
    d = dm.entries
    if not np.array_equal(d, d.T):
        raise ValueError("distance matrix is not symmetric")
    w = centered_gram(d)
    vals, vecs = np.linalg.eigh(w)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], _fix_signs(vecs[:, order])

    lam_max = max(float(vals[0]), 0.0)
    keep = vals > RANK_TOL * lam_max if lam_max > 0 else np.zeros_like(vals, dtype=bool)
    if keep.any():
        coords = vecs[:, keep] * np.sqrt(vals[keep])
    else:
        coords = np.zeros((d.shape[0], 1))
    denom = float(np.sum(np.abs(vals)))
    explained = np.cumsum(vals) / denom if denom > 0 else np.ones_like(vals)
    return Embedding(coords, vals, explained, tuple(labels), vecs)


def explained_variance(e: Embedding, d: int) -> float:
    """Cumulative variance fraction captured by the first ``d`` dimensions."""
    if not 1 <= d <= e.rank:
        raise ValueError(f"d must lie in [1, {e.rank}], got {d}")
    return float(e.explained[d - 1])


def project_out_of_sample(
    e: Embedding,
    base_pdfs: Sequence[DiscretePdf],
    new_pdf: DiscretePdf,
    metric: str = "hellinger-squared",
) -> np.ndarray:
    """Place ``new_pdf`` in an existing embedding without re-embedding (Gower/Nystrom).

    ``base_pdfs`` must be the set that generated ``e``, in the same order.
    """
    if e.eigenvectors is None or e.eigenvectors.shape[0] != len(base_pdfs):
        raise DimensionError("embedding was not built from these base pdfs")
    base = pairwise_distances(list(base_pdfs), metric).entries
    ext = pairwise_distances(list(base_pdfs) + [new_pdf], metric).entries[-1, :-1]
    # double-centre the new row against the base set
    b = -0.5 * (ext - base.mean(axis=0) - ext.mean() + base.mean())
    vals = e.eigenvalues
    lam_max = max(float(vals[0]), 0.0)
    keep = np.flatnonzero(vals > RANK_TOL * lam_max) if lam_max > 0 else np.array([], dtype=int)
    if keep.size == 0:
        return np.zeros(1)
    u = e.eigenvectors[:, keep]
    return (b @ u) / np.sqrt(vals[keep])


def meta_trajectory_distance(a: Trajectory, b: Trajectory) -> float:
    """Sum over aligned context lengths of the Hellinger distance between points."""
    if a.context_lengths != b.context_lengths:
        raise DimensionError("trajectories must share context lengths")
    if len(a) and a.grid != b.grid:
        raise DimensionError("trajectories live on different grids")
    ra = np.sqrt(a.mass_matrix())
    rb = np.sqrt(b.mass_matrix())
    d2 = np.clip(0.5 * np.sum((ra - rb) ** 2, axis=1), 0.0, 1.0)
    return float(np.sum(np.sqrt(d2)))


def meta_distance_matrix(trajectories: Sequence[Trajectory]) -> DistanceMatrix:
    """Squared meta-distances between every pair of trajectories."""
    m = len(trajectories)
    if m < 2:
        raise ValueError("need at least two trajectories")
    d = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            d[i, j] = d[j, i] = meta_trajectory_distance(trajectories[i], trajectories[j]) ** 2
    return DistanceMatrix(d, "meta-hellinger-squared")


def meta_inpca(trajectories: Sequence[Trajectory]) -> Embedding:
    return inpca_embed(meta_distance_matrix(trajectories), [t.label for t in trajectories])
