"""Fit a two-parameter KDE (bandwidth ``h``, shape ``s``) to a target trajectory.

At each context length the generalized-kernel KDE of the first ``n`` samples
is matched to the target pdf by minimizing the Hellinger distance over
``(log h, log s)`` with a multi-start Nelder-Mead search.  Parameter
uncertainties come from the inverse Hessian of that loss at the optimum.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .estimators import kde_weights_from_counts
from .kernels import KernelSpec
from .prob import DiscretePdf, SampleSet, Trajectory, uniform_ignorance

SHAPE_RANGE = (0.05, 20.0)
START_GRID = 5
XATOL = 1e-6
MAX_ITER = 500
HESSIAN_STEP = 1e-3
# search box in (log h, log s); h in grid units
LOG_H_BOUNDS = (math.log(1e-3), math.log(1e6))
LOG_S_BOUNDS = (math.log(1e-2), math.log(1e2))
SCHEDULE_COLUMNS = ("n", "h", "sigma_h", "s", "sigma_s", "residual", "converged")


@dataclass(frozen=True)
class FitPoint:
    context_length: int
    h: float
    s: float
    sigma_h: float
    sigma_s: float
    residual: float
    converged: bool
    hessian_ok: bool = True

    @property
    def rel_sigma_h(self) -> float:
        return self.sigma_h / self.h

    @property
    def rel_sigma_s(self) -> float:
        return self.sigma_s / self.s


@dataclass(frozen=True)
class FitSchedule:
    points: tuple
    source_label: str = ""

    def __post_init__(self):
        pts = tuple(self.points)
        ns = [p.context_length for p in pts]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("fit points must have strictly increasing context lengths")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def column(self, name: str) -> np.ndarray:
        attr = "context_length" if name == "n" else name
        return np.array([getattr(p, attr) for p in self.points], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SCHEDULE_COLUMNS)
        for p in self.points:
            w.writerow([p.context_length, repr(p.h), repr(p.sigma_h), repr(p.s),
                        repr(p.sigma_s), repr(p.residual), int(p.converged)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, source_label: str = "") -> "FitSchedule":
        rows = csv.DictReader(io.StringIO(text))
        pts = [
            FitPoint(int(r["n"]), float(r["h"]), float(r["s"]), float(r["sigma_h"]),
                     float(r["sigma_s"]), float(r["residual"]), bool(int(r["converged"])))
            for r in rows
        ]
        return cls(tuple(pts), source_label)


@dataclass
class HellingerLoss:
    """Hellinger distance between ``target`` and the KDE of ``counts`` at ``(log h, log s)``."""

    target: np.ndarray
    counts: np.ndarray
    _root_target: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._root_target = np.sqrt(self.target)

    def weights(self, log_h: float, log_s: float) -> np.ndarray:
        """Normalized KDE masses; works in log space so any ``h`` is representable."""
        w = kde_weights_from_counts(self.counts, log_h=log_h, log_s=log_s)
        total = w.sum()
        if not (total > 0 and np.isfinite(total)):
            w = self.counts
            total = w.sum()
        return w / total

    def __call__(self, x) -> float:
        log_h, log_s = float(x[0]), float(x[1])
        if not (math.isfinite(log_h) and math.isfinite(log_s)):
            return 1.0
        p = self.weights(log_h, log_s)
        d2 = 0.5 * float(np.sum((np.sqrt(p) - self._root_target) ** 2))
        return math.sqrt(min(max(d2, 0.0), 1.0))


def hessian_uncertainty(loss: Callable, optimum, step: float = HESSIAN_STEP) -> tuple[float, float, bool]:
    """Standard errors ``sqrt(diag(H^-1))`` from a central-difference Hessian.

    Returns ``(sigma_x, sigma_y, ok)``.  Any coordinate that loads on a
    non-positive curvature direction gets ``inf`` and ``ok`` is False.
    """
    x0 = np.asarray(optimum, dtype=float)
    f0 = loss(x0)
    e = np.eye(2) * step
    h = np.empty((2, 2))
    for i in range(2):
        h[i, i] = (loss(x0 + e[i]) - 2.0 * f0 + loss(x0 - e[i])) / step ** 2
    h[0, 1] = h[1, 0] = (
        loss(x0 + e[0] + e[1]) - loss(x0 + e[0] - e[1])
        - loss(x0 - e[0] + e[1]) + loss(x0 - e[0] - e[1])
    ) / (4.0 * step ** 2)
    if not np.all(np.isfinite(h)):
        return math.inf, math.inf, False
    w, v = np.linalg.eigh(h)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    good = w > 1e-10 * scale
    var = np.zeros(2)
    for k in range(2):
        if good[k]:
            var += v[:, k] ** 2 / w[k]
        else:
            var[np.abs(v[:, k]) > 1e-8] = math.inf
    ok = bool(good.all())
    return float(np.sqrt(var[0])), float(np.sqrt(var[1])), ok


def start_grid(domain_width: float, num: int = START_GRID) -> list[tuple[float, float]]:
    """Log-spaced ``(log h, log s)`` starting points."""
    log_h = np.linspace(math.log(0.05), math.log(domain_width), num)
    log_s = np.linspace(math.log(SHAPE_RANGE[0]), math.log(SHAPE_RANGE[1]), num)
    return [(float(a), float(b)) for a in log_h for b in log_s]


def _nelder_mead(loss, x0, max_iter):
    lo = np.array([LOG_H_BOUNDS[0], LOG_S_BOUNDS[0]])
    hi = np.array([LOG_H_BOUNDS[1], LOG_S_BOUNDS[1]])
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi - 0.3)
    simplex = np.array([x0, x0 + [0.3, 0.0], x0 + [0.0, 0.3]])
    res = minimize(
        loss, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
        options={"initial_simplex": simplex, "xatol": XATOL, "fatol": math.inf,
                 "maxiter": max_iter, "maxfev": 4 * max_iter},
    )
    return np.asarray(res.x, dtype=float), float(res.fun), bool(res.nit < max_iter)


def fit_bespoke_point(
    target: DiscretePdf,
    samples: SampleSet,
    n: int,
    init: tuple[float, float] | None = None,
    *,
    refine: int = 3,
    max_iter: int = MAX_ITER,
) -> FitPoint:
    """Fit ``(h, s)`` so the KDE of ``samples[:n]`` matches ``target``.

    All grid starts (plus ``init`` when given) are scored; Nelder-Mead is run
    from ``init`` and from the ``refine`` best-scoring grid starts.
    """
    if n < 1:
        raise ValueError("bespoke fits need n >= 1")
    if target.grid != samples.grid:
        raise ValueError("target and samples live on different grids")
    loss = HellingerLoss(target.mass, samples.prefix(n).counts())
    width = samples.grid.hi - samples.grid.lo

    starts = start_grid(width)
    scored = sorted(((loss(x), i, x) for i, x in enumerate(starts)), key=lambda t: (t[0], t[1]))
    chosen = [x for _, _, x in scored[:refine]]
    if init is not None:
        chosen.insert(0, (math.log(init[0]), math.log(init[1])))

    best = None
    for x0 in chosen:
        x, fx, conv = _nelder_mead(loss, x0, max_iter)
        if best is None or fx < best[1]:
            best = (x, fx, conv)
    x, fx, conv = best

    sig_lh, sig_ls, ok = hessian_uncertainty(loss, x)
    h, s = math.exp(x[0]), math.exp(x[1])
    return FitPoint(n, h, s, h * sig_lh, s * sig_ls, fx, conv, ok)


def bespoke_pdf(samples: SampleSet, n: int, h: float, s: float) -> DiscretePdf:
    if n == 0:
        return uniform_ignorance(samples.grid)
    w = kde_weights_from_counts(samples.prefix(n).counts(), KernelSpec(s, h))
    return DiscretePdf.from_weights(samples.grid, w)


def fit_bespoke_schedule(
    trajectory: Trajectory,
    samples: SampleSet,
    *,
    warm_start: bool = True,
    refine: int = 3,
) -> tuple[FitSchedule, Trajectory]:
    """Fit every ``n >= 1`` point of ``trajectory``; returns the schedule and its imitation.

    With ``warm_start`` each fit also starts from the previous optimum.  The
    imitation trajectory covers the fitted context lengths only.
    """
    points = []
    init = None
    for n, pdf in trajectory:
        if n == 0:
            continue
        if n > len(samples):
            raise ValueError(f"trajectory needs {n} samples, only {len(samples)} available")
        fp = fit_bespoke_point(pdf, samples, n, init if warm_start else None, refine=refine)
        points.append(fp)
        init = (fp.h, fp.s)
    schedule = FitSchedule(tuple(points), trajectory.label)
    imitation = Trajectory(
        tuple(p.context_length for p in points),
        tuple(bespoke_pdf(samples, p.context_length, p.h, p.s) for p in points),
        f"bespoke({trajectory.label})",
    )
    return schedule, imitation


def loglog_slope(ns: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(values)`` against ``log(ns)``."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
