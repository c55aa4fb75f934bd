"""Random smooth target pdfs drawn from a squared-exponential Gaussian process."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NumericalError
from .prob import DiscretePdf, Grid

MAX_JITTER = 1e-6
TAPER_FRACTION = 0.05


@dataclass(frozen=True)
class GpConfig:
    """GP on the unit interval sampled at ``10**precision`` points."""

    correlation_length: float = 0.1
    precision: int = 2
    seed: int = 0
    jitter: float = 1e-10

    def __post_init__(self):
        if not self.correlation_length > 0:
            raise ValueError("correlation_length must be positive")
        if self.resolution < 10:
            raise ValueError("resolution must be at least 10 points")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @property
    def resolution(self) -> int:
        return 10 ** self.precision

    def to_dict(self) -> dict:
        return asdict(self)


def squared_exp_covariance(points, length: float) -> np.ndarray:
    """``exp(-(x_i - x_j)^2 / (2 l^2))``."""
    if not length > 0:
        raise ValueError("correlation length must be positive")
    x = np.asarray(points, dtype=float)
    diff = x[:, None] - x[None, :]
    return np.exp(-(diff ** 2) / (2.0 * length ** 2))


def stable_cholesky(cov: np.ndarray, jitter: float = 1e-10, max_jitter: float = MAX_JITTER) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``cov + jitter I``, escalating jitter tenfold on failure."""
    eye = np.eye(cov.shape[0])
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(cov + j * eye), j
        except np.linalg.LinAlgError:
            if j >= max_jitter:
                raise NumericalError(f"Cholesky failed with jitter up to {max_jitter:g}") from None
            j = min(max(j * 10.0, 1e-12), max_jitter)


def gp_points(config: GpConfig) -> np.ndarray:
    return np.linspace(0.0, 1.0, config.resolution)


def sample_gp_path(config: GpConfig) -> np.ndarray:
    """Zero-mean, unit-variance GP draw on the unit interval (before any shaping)."""
    x = gp_points(config)
    chol, _ = stable_cholesky(squared_exp_covariance(x, config.correlation_length), config.jitter)
    z = np.random.default_rng(config.seed).standard_normal(x.size)
    return chol @ z


def edge_taper(num: int, fraction: float = TAPER_FRACTION) -> np.ndarray:
    """Raised-cosine window rising from 0 over the outer ``fraction`` at each end."""
    w = np.ones(num)
    k = max(1, int(round(fraction * (num - 1))))
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(k + 1) / k))
    w[: k + 1] = ramp
    w[num - k - 1 :] = ramp[::-1]
    return w


def shape_gp_path(path: np.ndarray) -> np.ndarray:
    """Non-negative density on [0, 1] vanishing at both edges, integrating to 1."""
    f = (path - path.min()) * edge_taper(path.size)
    x = np.linspace(0.0, 1.0, path.size)
    area = np.trapezoid(f, x)
    if not area > 0:
        raise NumericalError("GP sample is identically zero after shaping")
    return f / area


def bin_density(values: np.ndarray, grid: Grid) -> DiscretePdf:
    """Integrate a piecewise-linear density on [0, 1] over each grid bin."""
    x = np.linspace(0.0, 1.0, values.size)
    seg = 0.5 * (values[1:] + values[:-1]) * np.diff(x)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    edges = np.linspace(0.0, 1.0, grid.num_bins + 1)
    # cumulative integral of a linear interpolant is quadratic inside each segment
    idx = np.clip(np.searchsorted(x, edges, side="right") - 1, 0, values.size - 2)
    dx = edges - x[idx]
    h = x[idx + 1] - x[idx]
    slope = (values[idx + 1] - values[idx]) / h
    cdf = cum[idx] + values[idx] * dx + 0.5 * slope * dx ** 2
    mass = np.clip(np.diff(cdf), 0.0, None)
    return DiscretePdf.from_weights(grid, mass)


def generate_random_pdf(config: GpConfig, grid: Grid = Grid()) -> DiscretePdf:
    """GP draw -> shift to non-negative -> edge taper -> normalize -> bin onto ``grid``."""
    return bin_density(shape_gp_path(sample_gp_path(config)), grid)


def path_curvature(values: np.ndarray, dx: float) -> float:
    """Mean squared central second difference over interior points."""
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        raise ValueError("need at least three points")
    d2 = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dx ** 2
    return float(np.mean(d2 ** 2))


def numeric_curvature(pdf: DiscretePdf) -> float:
    """Average curvature of ``pdf`` as a density on the unit interval."""
    m = pdf.grid.num_bins
    if m < 3:
        raise ValueError("need at least three bins")
    dx = 1.0 / m
    return path_curvature(pdf.mass / dx, dx)


def analytic_curvature(length: float) -> float:
    """Closed-form expected curvature ``3 / (4 l^3 sqrt(pi))``."""
    if not length > 0:
        raise ValueError("correlation length must be positive")
    return 3.0 / (4.0 * length ** 3 * math.sqrt(math.pi))


def gp_path_curvature(config: GpConfig) -> float:
    """Numeric curvature of the standardized (unit-variance) GP draw."""
    path = sample_gp_path(config)
    return path_curvature(path, 1.0 / (config.resolution - 1))
