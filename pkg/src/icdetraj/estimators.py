"""Classical density estimators and bandwidth theory.

Samples are bin indices; a sample in bin ``j`` sits at that bin's centre, so
kernel arguments reduce to integer bin offsets divided by the bandwidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .kernels import KernelSpec, is_tophat, kernel_eval, kernel_moments, log_scale_terms, relative_kernel
from .prob import DiscretePdf, Grid, SampleSet, Trajectory, uniform_ignorance

# floor used when the Silverman spread collapses (repeated samples)
SILVERMAN_H_MIN = 0.1


@dataclass(frozen=True)
class PowerLaw:
    """``h(n) = C * n**exponent``.

    ``unit="domain"`` measures ``C`` in widths of the whole grid (the data
    domain rescaled to the unit interval); ``unit="grid"`` in bin widths.
    """

    C: float = 1.0
    exponent: float = -0.2
    unit: str = "domain"

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.unit not in ("domain", "grid"):
            raise ValueError(f"unknown unit {self.unit!r}")

    def bandwidth(self, samples: SampleSet) -> float:
        n = len(samples)
        scale = samples.grid.hi - samples.grid.lo if self.unit == "domain" else 1.0
        return self.C * scale * n ** self.exponent


@dataclass(frozen=True)
class Silverman:
    def bandwidth(self, samples: SampleSet) -> float:
        if len(samples) < 2:
            return SILVERMAN_H_MIN
        return silverman_bandwidth(samples)


@dataclass(frozen=True)
class Constant:
    h: float = 1.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("constant bandwidth must be positive")

    def bandwidth(self, samples: SampleSet) -> float:
        return self.h


@dataclass(frozen=True)
class HistogramPrior:
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass(frozen=True)
class KdeConfig:
    shape: float = 2.0
    schedule: PowerLaw | Silverman | Constant = PowerLaw()


@lru_cache(maxsize=8)
def _log_offsets(num_bins: int) -> np.ndarray:
    d = np.abs(np.arange(-(num_bins - 1), num_bins, dtype=float))
    with np.errstate(divide="ignore"):
        out = np.log(d)
    out.setflags(write=False)
    return out


def offset_kernel(log_h: float, log_s: float, num_bins: int) -> np.ndarray:
    """Kernel at integer offsets ``d = -(M-1) .. M-1`` relative to its peak.

    Parameterized by ``log h`` and ``log s`` so that extreme bandwidths (the
    small-``s`` members need ``h`` far beyond float range) stay finite.
    """
    s = math.exp(log_s)
    log_b, _ = log_scale_terms(s)
    with np.errstate(over="ignore"):
        return np.exp(-np.exp(s * (log_b + _log_offsets(num_bins) - log_h)))


def kde_weights_from_counts(counts: np.ndarray, spec: KernelSpec | None = None, *, log_h=None, log_s=None) -> np.ndarray:
    """KDE bin weights as the convolution of bin counts with the discretized kernel.

    Proportional to ``sum_j counts_j K((i - j)/h)``; normalizing gives the
    same pdf as :func:`kde_estimate`.  Pass either ``spec`` or the log
    parameters.
    """
    m = counts.shape[0]
    if spec is not None:
        if is_tophat(spec.shape):
            d = np.abs(np.arange(-(m - 1), m, dtype=float))
            kern = relative_kernel(spec.shape, d / spec.bandwidth)
        else:
            kern = offset_kernel(math.log(spec.bandwidth), math.log(spec.shape), m)
    else:
        kern = offset_kernel(log_h, log_s, m)
    full = np.convolve(counts, kern)
    return full[m - 1 : 2 * m - 1]


def _normalize_or_fallback(grid: Grid, weights: np.ndarray, counts: np.ndarray) -> DiscretePdf:
    total = weights.sum()
    if total > 0 and np.isfinite(total):
        return DiscretePdf(grid, weights / total)
    # every kernel underflowed: collapse onto the empirical histogram
    return DiscretePdf.from_weights(grid, counts)


def kde_estimate(samples: SampleSet, spec: KernelSpec, grid: Grid | None = None) -> DiscretePdf:
    """Kernel density estimate at bin centres, renormalized over the grid.

    Direct sum ``(1/nh) sum_i K_s((x - X_i)/h)`` evaluated on every bin centre,
    times the bin width.  Mass that would leak past the domain edges is
    redistributed by renormalization.
    """
    grid = samples.grid if grid is None else grid
    n = len(samples)
    if n == 0:
        raise ValueError("kde_estimate needs at least one sample; use uniform_ignorance for n=0")
    x = grid.centers
    xi = samples.bin_indices.astype(float) + 0.5
    u = (x[None, :] - xi[:, None]) / spec.bandwidth
    dens = kernel_eval(spec.shape, u).sum(axis=0) / (n * spec.bandwidth)
    return _normalize_or_fallback(grid, dens * grid.width, samples.counts())


def bayesian_histogram(samples: SampleSet, prior: HistogramPrior = HistogramPrior(), grid: Grid | None = None) -> DiscretePdf:
    """``(n_i + alpha) / (n + alpha M)`` per bin."""
    grid = samples.grid if grid is None else grid
    n = len(samples)
    m = grid.num_bins
    if prior.alpha == 0 and n == 0:
        raise ValueError("histogram with alpha=0 and no samples is undefined")
    counts = samples.counts()
    return DiscretePdf(grid, (counts + prior.alpha) / (n + prior.alpha * m))


def silverman_rule(sigma: float, iqr: float, n: int) -> float:
    spread = min(sigma, iqr / 1.34)
    if spread <= 0:
        return SILVERMAN_H_MIN
    return 0.9 * spread * n ** (-0.2)


def silverman_bandwidth(samples: SampleSet) -> float:
    """Silverman's rule of thumb on the bin-centre values of ``samples``."""
    n = len(samples)
    if n < 2:
        raise ValueError("Silverman's rule needs at least two samples")
    x = samples.bin_indices.astype(float) + 0.5
    q75, q25 = np.percentile(x, [75, 25])
    return silverman_rule(float(np.std(x, ddof=1)), float(q75 - q25), n)


def amise(h: float, s: float, n: int, curvature: float) -> float:
    """``R(K)/(nh) + h^4 mu2(K)^2 R(p'') / 4``."""
    if not h > 0 or n < 1 or curvature < 0:
        raise ValueError("amise needs h > 0, n >= 1, curvature >= 0")
    rk, mu2 = kernel_moments(s)
    return rk / (n * h) + 0.25 * h ** 4 * mu2 ** 2 * curvature


def amise_optimal_bandwidth(s: float, n: int, curvature: float) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not curvature > 0:
        raise ValueError("curvature must be positive; the optimal bandwidth diverges at 0")
    rk, mu2 = kernel_moments(s)
    return (rk / (n * mu2 ** 2 * curvature)) ** 0.2


def estimate(config, samples: SampleSet, grid: Grid | None = None) -> DiscretePdf:
    """Apply one estimator configuration to ``samples``; ``n = 0`` gives ignorance."""
    grid = samples.grid if grid is None else grid
    if isinstance(config, HistogramPrior):
        return bayesian_histogram(samples, config, grid)
    if isinstance(config, KdeConfig):
        if len(samples) == 0:
            return uniform_ignorance(grid)
        h = config.schedule.bandwidth(samples)
        return kde_estimate(samples, KernelSpec(config.shape, h), grid)
    raise TypeError(f"unsupported estimator config {config!r}")


def de_trajectory(config, samples: SampleSet, context_lengths: Sequence[int], grid: Grid | None = None, label: str = "") -> Trajectory:
    """Estimate from each prefix ``samples[:n]`` for every requested ``n``."""
    grid = samples.grid if grid is None else grid
    ns = [int(n) for n in context_lengths]
    if ns and max(ns) > len(samples):
        raise ValueError(f"context length {max(ns)} exceeds the {len(samples)} available samples")
    pdfs = [estimate(config, samples.prefix(n), grid) for n in ns]
    return Trajectory(tuple(ns), tuple(pdfs), label)


def bandwidth_schedule(config: KdeConfig, samples: SampleSet, context_lengths: Sequence[int]) -> list[float]:
    """Bandwidths a KDE config would use at each context length (NaN at n=0)."""
    return [
        config.schedule.bandwidth(samples.prefix(n)) if n > 0 else math.nan
        for n in context_lengths
    ]

