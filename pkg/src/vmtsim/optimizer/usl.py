"""Universal Scalability Law capacity model and its regression fit.

Sustainable throughput of a node with ``n`` PMUs under offered load ``X``::

    s = X / (1 + (n*alpha0 + alpha1) * (X - 1)) + (n*beta0 + beta1) * X

The fit first estimates ``a_n`` and ``b_n`` per observed PMU count, then fits
them linearly in ``n``.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

logger = logging.getLogger(__name__)

MIN_SAMPLES = 8
A_GRID = np.concatenate(([0.0], np.logspace(-9, 2, 221)))


class UslDomainError(ValueError):
    """Non-positive USL denominator."""


class FitError(ValueError):
    """Insufficient samples or a singular regression."""


@dataclass(frozen=True)
class UslParams:
    """USL coefficients of one node."""

    alpha0: float = 0.0
    alpha1: float = 0.0
    beta0: float = 0.0
    beta1: float = 0.0

    def a(self, n: float) -> float:
        return n * self.alpha0 + self.alpha1

    def b(self, n: float) -> float:
        return n * self.beta0 + self.beta1


def usl_capacity(x: float, n: float, params: UslParams) -> float:
    """Sustainable throughput for offered load ``x`` with ``n`` PMUs.

    Raises:
        UslDomainError: If the denominator is not positive
    """
    if x < 0:
        raise UslDomainError(f"Offered load {x} is negative")
    denom = 1.0 + params.a(n) * (x - 1.0)
    if denom <= 0.0:
        raise UslDomainError(f"USL denominator {denom:.6g} <= 0 at X={x}, n={n}")
    return x / denom + params.b(n) * x


@dataclass
class UslFit:
    """Result of :func:`fit_usl` with the intermediate per-count curves."""

    params: UslParams
    per_count: dict[int, tuple[float, float]] = field(default_factory=dict)
    rss: float = 0.0


def _curve_sse(a: float, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Best ``b`` for fixed ``a`` (closed form) and the resulting SSE."""
    denom = 1.0 + a * (x - 1.0)
    if np.any(denom <= 0.0):
        return math.inf, 0.0
    r = y - x / denom
    b = float(np.dot(r, x) / np.dot(x, x))
    resid = r - b * x
    return float(np.dot(resid, resid)), b


def fit_curve(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Fit ``y = x / (1 + a(x - 1)) + b x`` for one PMU count.

    Grid search over ``a`` on a log scale (``b`` is linear and solved in
    closed form), then bounded scalar refinement around the best grid point.

    Returns:
        (a, b, sse)
    """
    scores = [_curve_sse(float(a), x, y) for a in A_GRID]
    best = min(range(len(A_GRID)), key=lambda i: (scores[i][0], i))
    best_a, (best_sse, best_b) = float(A_GRID[best]), scores[best]

    lo = math.log10(A_GRID[best - 1]) if best > 1 else -12.0
    hi = math.log10(A_GRID[min(best + 1, len(A_GRID) - 1)])
    if best_sse > 0.0 and hi > lo:
        res = minimize_scalar(
            lambda t: _curve_sse(10.0**t, x, y)[0],
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12},
        )
        a = 10.0 ** float(res.x)
        sse, b = _curve_sse(a, x, y)
        if sse < best_sse:
            best_a, best_b, best_sse = a, b, sse
    return best_a, best_b, best_sse


def fit_usl_detailed(samples: Iterable[tuple[float, float, int]]) -> UslFit:
    """Fit USL parameters from (X, throughput, n) samples.

    Raises:
        FitError: With fewer than 8 samples, fewer than two PMU counts,
            a count observed at fewer than two loads, or a singular linear fit
    """
    data = list(samples)
    if len(data) < MIN_SAMPLES:
        raise FitError(f"Need at least {MIN_SAMPLES} samples, got {len(data)}")
    groups: dict[int, list[tuple[float, float]]] = defaultdict(list)
    for x, s, n in data:
        groups[int(n)].append((float(x), float(s)))
    if len(groups) < 2:
        raise FitError("Samples must span at least two distinct PMU counts")

    per_count: dict[int, tuple[float, float]] = {}
    rss = 0.0
    for n in sorted(groups):
        pts = np.array(groups[n], dtype=float)
        if len(np.unique(pts[:, 0])) < 2:
            raise FitError(f"PMU count {n} observed at fewer than two loads")
        a, b, sse = fit_curve(pts[:, 0], pts[:, 1])
        per_count[n] = (a, b)
        rss += sse

    counts = np.array(sorted(per_count), dtype=float)
    design = np.column_stack([counts, np.ones_like(counts)])
    if np.linalg.matrix_rank(design) < 2:
        raise FitError("Singular linear fit over PMU counts")
    a_vals = np.array([per_count[int(n)][0] for n in counts])
    b_vals = np.array([per_count[int(n)][1] for n in counts])
    (alpha0, alpha1), *_ = np.linalg.lstsq(design, a_vals, rcond=None)
    (beta0, beta1), *_ = np.linalg.lstsq(design, b_vals, rcond=None)
    params = UslParams(float(alpha0), float(alpha1), float(beta0), float(beta1))
    logger.info("USL fit over %d samples, %d counts: %s", len(data), len(per_count), params)
    return UslFit(params, per_count, rss)


def fit_usl(samples: Iterable[tuple[float, float, int]]) -> UslParams:
    """Fit USL parameters from (X, throughput, n) samples."""
    return fit_usl_detailed(samples).params
