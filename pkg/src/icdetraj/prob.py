"""Discrete probability objects on a digit grid and their Hellinger geometry.

Every distribution in the package is a :class:`DiscretePdf`: a vector of
per-bin probability masses over ``10**num_digits`` unit-width bins covering
``[0, 10**num_digits)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DimensionError

NORMALIZATION_TOL = 1e-9

# geodesic angle below which the arc is treated as degenerate
_THETA_EPS = 1e-8


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``10**num_digits`` bins of width 1."""

    num_digits: int = 2

    def __post_init__(self):
        if int(self.num_digits) != self.num_digits or self.num_digits < 1:
            raise ValueError(f"num_digits must be a positive integer, got {self.num_digits}")

    @property
    def num_bins(self) -> int:
        return 10 ** self.num_digits

    @property
    def lo(self) -> float:
        return 0.0

    @property
    def hi(self) -> float:
        return float(self.num_bins)

    @property
    def width(self) -> float:
        return 1.0

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.num_bins + 1, dtype=float)

    @property
    def centers(self) -> np.ndarray:
        return np.arange(self.num_bins, dtype=float) + 0.5

    @property
    def midpoint_bin(self) -> int:
        return self.num_bins // 2


@dataclass(frozen=True, eq=False)
class DiscretePdf:
    """Probability mass per bin of ``grid``.

    The mass vector is copied and frozen on construction.
    """

    grid: Grid
    mass: np.ndarray

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float)
        if mass.ndim != 1 or mass.shape[0] != self.grid.num_bins:
            raise DimensionError(
                f"mass has shape {mass.shape}, grid expects ({self.grid.num_bins},)"
            )
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise ValueError("mass entries must be finite and non-negative")
        total = mass.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"mass sums to {total!r}, expected 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_weights(cls, grid: Grid, weights) -> "DiscretePdf":
        """Normalize non-negative ``weights`` into a pdf."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("weights must have positive finite total")
        return cls(grid, w / total)

    def __len__(self):
        return self.grid.num_bins

    def __eq__(self, other):
        if not isinstance(other, DiscretePdf):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.mass, other.mass)

    def __hash__(self):
        return hash((self.grid, self.mass.tobytes()))

    def density(self) -> np.ndarray:
        return self.mass / self.grid.width


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sequence of pdfs indexed by strictly increasing context length."""

    context_lengths: tuple
    pdfs: tuple
    label: str = ""

    def __post_init__(self):
        ns = tuple(int(n) for n in self.context_lengths)
        pdfs = tuple(self.pdfs)
        if len(ns) != len(pdfs):
            raise DimensionError(f"{len(ns)} context lengths but {len(pdfs)} pdfs")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("context lengths must be strictly increasing")
        if pdfs and any(p.grid != pdfs[0].grid for p in pdfs):
            raise DimensionError("trajectory pdfs live on different grids")
        object.__setattr__(self, "context_lengths", ns)
        object.__setattr__(self, "pdfs", pdfs)

    def __len__(self):
        return len(self.pdfs)

    def __iter__(self):
        return iter(zip(self.context_lengths, self.pdfs))

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.label == other.label
            and self.context_lengths == other.context_lengths
            and self.pdfs == other.pdfs
        )

    __hash__ = None

    @property
    def grid(self) -> Grid:
        return self.pdfs[0].grid

    def mass_matrix(self) -> np.ndarray:
        return np.stack([p.mass for p in self.pdfs])


@dataclass(frozen=True, eq=False)
class SampleSet:
    """i.i.d. draws recorded as bin indices."""

    bin_indices: np.ndarray
    seed: int | None = None
    grid: Grid = field(default_factory=Grid)

    def __post_init__(self):
        idx = np.array(self.bin_indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.grid.num_bins):
            raise DimensionError(f"sample indices outside [0, {self.grid.num_bins})")
        idx.setflags(write=False)
        object.__setattr__(self, "bin_indices", idx)

    def __len__(self):
        return int(self.bin_indices.size)

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.bin_indices, other.bin_indices)

    __hash__ = None

    def prefix(self, n: int) -> "SampleSet":
        if n > len(self):
            raise ValueError(f"requested {n} samples, only {len(self)} available")
        return SampleSet(self.bin_indices[:n], self.seed, self.grid)

    def counts(self) -> np.ndarray:
        return np.bincount(self.bin_indices, minlength=self.grid.num_bins).astype(float)


def _check_same_grid(p: DiscretePdf, q: DiscretePdf):
    if p.grid != q.grid:
        raise DimensionError(f"grid mismatch: {p.grid} vs {q.grid}")


def bhattacharyya_coefficient(p: DiscretePdf, q: DiscretePdf) -> float:
    _check_same_grid(p, q)
    return float(np.sum(np.sqrt(p.mass * q.mass)))


def hellinger_sq(p: DiscretePdf, q: DiscretePdf) -> float:
    """Squared Hellinger distance ``1 - sum(sqrt(p*q))`` clamped to [0, 1].

    Evaluated as ``0.5 * sum((sqrt(p) - sqrt(q))**2)``, which equals the
    Bhattacharyya form for normalized inputs but avoids cancellation near 0.
    """
    _check_same_grid(p, q)
    d2 = 0.5 * float(np.sum((np.sqrt(p.mass) - np.sqrt(q.mass)) ** 2))
    return min(max(d2, 0.0), 1.0)


def hellinger_distance(p: DiscretePdf, q: DiscretePdf) -> float:
    return float(np.sqrt(hellinger_sq(p, q)))


def kl_divergence(p: DiscretePdf, q: DiscretePdf) -> float:
    """KL(p || q) in nats; ``inf`` when p is not absolutely continuous wrt q."""
    _check_same_grid(p, q)
    support = p.mass > 0
    if np.any(q.mass[support] == 0):
        return float("inf")
    pm = p.mass[support]
    return float(np.sum(pm * np.log(pm / q.mass[support])))


def integrated_squared_error(p: DiscretePdf, q: DiscretePdf) -> float:
    """``sum((p - q)**2) / width`` -- the squared L2 distance between densities."""
    _check_same_grid(p, q)
    return float(np.sum((p.mass - q.mass) ** 2) / p.grid.width)


def make_gaussian_target(mean: float, sigma: float, grid: Grid = Grid()) -> DiscretePdf:
    """Gaussian integrated over each bin, truncated to the grid and renormalized.

    ``mean`` is in bin-index coordinates: ``mean=k`` centres the bump on the
    middle of bin ``k`` (data value ``k + 0.5``), matching how samples are
    placed at bin centres.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    # bin k spans [k - 0.5, k + 0.5) in index coordinates
    z = (np.arange(grid.num_bins + 1) - 0.5 - mean) / sigma
    cdf = ndtr(z)
    mass = np.diff(cdf)
    if mass.sum() <= 0:
        # all mass fell off the grid; the nearest edge bin takes it
        mass = np.zeros(grid.num_bins)
        mass[int(np.clip(round(mean), 0, grid.num_bins - 1))] = 1.0
    return DiscretePdf.from_weights(grid, np.clip(mass, 0.0, None))


def make_uniform_target(lo: float, hi: float, grid: Grid = Grid()) -> DiscretePdf:
    """Uniform density on ``[lo, hi)`` in data coordinates, binned by overlap."""
    if not (grid.lo <= lo < hi <= grid.hi):
        raise ValueError(f"need {grid.lo} <= lo < hi <= {grid.hi}, got [{lo}, {hi})")
    edges = grid.edges
    overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return DiscretePdf.from_weights(grid, overlap)


def uniform_ignorance(grid: Grid = Grid()) -> DiscretePdf:
    return DiscretePdf(grid, np.full(grid.num_bins, 1.0 / grid.num_bins))


def delta_pdf(bin_index: int, grid: Grid = Grid()) -> DiscretePdf:
    mass = np.zeros(grid.num_bins)
    mass[bin_index] = 1.0
    return DiscretePdf(grid, mass)


def bhattacharyya_angle(p: DiscretePdf, q: DiscretePdf) -> float:
    """Great-circle angle between ``sqrt(p)`` and ``sqrt(q)`` on the unit sphere."""
    return float(np.arccos(np.clip(bhattacharyya_coefficient(p, q), -1.0, 1.0)))


def hellinger_geodesic(p: DiscretePdf, q: DiscretePdf, num_points: int = 256) -> list[DiscretePdf]:
    """Points on the Hellinger geodesic from ``p`` to ``q`` at evenly spaced t.

    The geodesic is the great-circle arc between the square-root vectors:
    ``sqrt(p_t) = (sin((1-t)theta) sqrt(p) + sin(t theta) sqrt(q)) / sin(theta)``.
    """
    _check_same_grid(p, q)
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    ts = np.linspace(0.0, 1.0, num_points)
    a, b = np.sqrt(p.mass), np.sqrt(q.mass)
    theta = bhattacharyya_angle(p, q)
    if theta < _THETA_EPS:
        # coincident endpoints: the arc collapses to a point
        return [p] * (num_points - 1) + [q]
    out = []
    for t in ts:
        if t == 0.0:
            out.append(p)
            continue
        if t == 1.0:
            out.append(q)
            continue
        if np.pi - theta < _THETA_EPS:
            # antipodal roots cannot occur for non-negative vectors; keep the
            # chord limit for robustness
            root = (1.0 - t) * a + t * b
        else:
            root = (np.sin((1.0 - t) * theta) * a + np.sin(t * theta) * b) / np.sin(theta)
        out.append(DiscretePdf.from_weights(p.grid, np.clip(root, 0.0, None) ** 2))
    return out


def default_variance_grid(num: int = 64, v_max: float = 1e6, v_min: float = 1e-2) -> np.ndarray:
    return np.logspace(np.log10(v_max), np.log10(v_min), num)


def gaussian_submanifold(grid: Grid = Grid(), variances: Sequence[float] | None = None) -> list[DiscretePdf]:
    """Gaussians centred on the grid midpoint, one per variance, wide to narrow."""
    if grid.num_bins < 1:
        raise ValueError("empty grid")
    v = default_variance_grid() if variances is None else np.asarray(variances, dtype=float)
    if v.size == 0:
        raise ValueError("variance grid is empty")
    if np.any(v <= 0):
        raise ValueError("variances must be positive")
    if np.any(np.diff(v) >= 0):
        raise ValueError("variances must be strictly decreasing")
    return [make_gaussian_target(grid.midpoint_bin, float(np.sqrt(vi)), grid) for vi in v]


def distance_to_curve(p: DiscretePdf, curve: Sequence[DiscretePdf]) -> float:
    """Smallest Hellinger distance from ``p`` to any point of ``curve``."""
    roots = np.sqrt(np.stack([c.mass for c in curve]))
    d2 = 0.5 * np.sum((roots - np.sqrt(p.mass)) ** 2, axis=1)
    return float(np.sqrt(np.clip(d2.min(), 0.0, 1.0)))


def sample(pdf: DiscretePdf, n: int, seed: int) -> SampleSet:
    """Draw ``n`` bin indices by inverse-CDF lookup; deterministic in ``seed``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(pdf.mass)
    cdf[-1] = 1.0
    u = rng.random(n)
    idx = np.searchsorted(cdf, u, side="right")
    return SampleSet(np.minimum(idx, pdf.grid.num_bins - 1), seed, pdf.grid)
