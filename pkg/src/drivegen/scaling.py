"""Log-quadratic data-scaling fits with residual bands and saturation points.

The model s = a*log(n)^2 + b*log(n) + c is linear in its coefficients, so
the least-squares objective is solved exactly through the 3x3 normal
equations. Natural logarithms throughout (any base is an affine
reparameterization of the coefficients).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import FitError

# |a| at or below this is treated as zero: the model has degenerated to a
# straight line in log n and has no vertex.
A_DEGENERATE_TOL = 1e-12


@dataclass(frozen=True, slots=True)
class ScalingPoint:
    n: float  # total data size; any positive count
    s: float  # observed performance score

    def __post_init__(self):
        if not (self.n > 0):
            raise FitError(f"data size must be positive, got {self.n}")
        if not math.isfinite(self.s):
            raise FitError(f"score must be finite, got {self.s}")


@dataclass(frozen=True, slots=True)
class FitResult:
    a: float
    b: float
    c: float
    residual_std: float
    saturation_n: float | None
    count: int
    stderr: tuple[float, float, float] | None = None

    def evaluate(self, n: float) -> float:
        ln = math.log(n)
        return self.a * ln * ln + self.b * ln + self.c


def fit_log_quadratic(points: Sequence[ScalingPoint]) -> FitResult:
    """Least-squares fit of the log-quadratic scaling model.

    Requires at least 3 points with 3 distinct sizes. residual_std is
    sqrt(SSR / max(M - 3, 1)); the saturation point exp(-b / 2a) is reported
    whenever the curvature is genuinely negative.
    """
    if len(points) < 3:
        raise FitError(f"need at least 3 points, got {len(points)}")
    ns = np.array([p.n for p in points], dtype=float)
    ss = np.array([p.s for p in points], dtype=float)
    if len(set(ns.tolist())) < 3:
        raise FitError("need at least 3 distinct data sizes")

    ln = np.log(ns)
    X = np.stack([ln * ln, ln, np.ones_like(ln)], axis=1)
    XtX = X.T @ X
    try:
        beta = np.linalg.solve(XtX, X.T @ ss)
    except np.linalg.LinAlgError as e:
        raise FitError(f"rank-deficient design: {e}") from e

    resid = ss - X @ beta
    ssr = float(resid @ resid)
    dof = max(len(points) - 3, 1)
    residual_std = math.sqrt(ssr / dof)

    a, b, c = (float(v) for v in beta)
    saturation = None
    if a < -A_DEGENERATE_TOL:
        exponent = -b / (2.0 * a)
        saturation = math.exp(exponent) if exponent < 700.0 else math.inf

    stderr = None
    if len(points) > 3:
        cov = (ssr / dof) * np.linalg.inv(XtX)
        stderr = tuple(float(math.sqrt(max(0.0, cov[i, i]))) for i in range(3))

    return FitResult(
        a=a, b=b, c=c, residual_std=residual_std, saturation_n=saturation,
        count=len(points), stderr=stderr,
    )


def emit_curve(
    fit: FitResult, n_range: tuple[float, float], samples: int
) -> list[tuple[float, float, float, float]]:
    """(n, s_fit, s_lo, s_hi) rows on a log-uniform grid over n_range."""
    n_min, n_max = n_range
    if not (0 < n_min < n_max):
        raise FitError(f"invalid range ({n_min}, {n_max})")
    if samples < 2:
        raise FitError("need at least 2 curve samples")
    log_min, log_max = math.log(n_min), math.log(n_max)
    rows = []
    for i in range(samples):
        ln = log_min + (log_max - log_min) * i / (samples - 1)
        n = n_min if i == 0 else (n_max if i == samples - 1 else math.exp(ln))
        s = fit.evaluate(n)
        rows.append((n, s, s - fit.residual_std, s + fit.residual_std))
    return rows


FLAG_SATURATING = "saturating"
FLAG_SATURATING_EXTRAPOLATED = "saturating-extrapolated"
FLAG_NON_SATURATING = "non-saturating"


def saturation_flag(fit: FitResult, n_min: float, n_max: float) -> str:
    """Classify a fit: a vertex inside [n_min/10, n_max*10] saturates the
    trend; a vertex far outside is an extrapolation artifact."""
    if fit.saturation_n is None:
        return FLAG_NON_SATURATING
    if n_min / 10.0 <= fit.saturation_n <= n_max * 10.0:
        return FLAG_SATURATING
    return FLAG_SATURATING_EXTRAPOLATED


def compare_fits(runs: Mapping[str, Sequence[ScalingPoint]]) -> dict[str, dict]:
    """Fit every labeled run and flag its saturation behavior."""
    report: dict[str, dict] = {}
    for label, points in runs.items():
        fit = fit_log_quadratic(points)
        n_min = min(p.n for p in points)
        n_max = max(p.n for p in points)
        sat = fit.saturation_n
        report[label] = {
            "a": fit.a,
            "b": fit.b,
            "c": fit.c,
            "residual_std": fit.residual_std,
            "saturation_n": sat if sat is not None and math.isfinite(sat) else None,
            "count": fit.count,
            "flag": saturation_flag(fit, n_min, n_max),
        }
    return report
