import math
import random

import numpy as np
import pytest

from drivegen.errors import FitError
from drivegen.scaling import (
    FLAG_NON_SATURATING,
    FLAG_SATURATING,
    FitResult,
    ScalingPoint,
    compare_fits,
    emit_curve,
    fit_log_quadratic,
    saturation_flag,
)


def model_points(a, b, c, ns, noise=0.0, rng=None):
    pts = []
    for n in ns:
        s = a * math.log(n) ** 2 + b * math.log(n) + c
        if noise and rng is not None:
            s += rng.gauss(0.0, noise)
        pts.append(ScalingPoint(n=n, s=s))
    return pts


SIX_N = [math.e ** k for k in range(1, 7)]


def test_exact_recovery_noiseless():
    fit = fit_log_quadratic(model_points(-0.5, 3.0, 10.0, SIX_N))
    assert fit.a == pytest.approx(-0.5, abs=1e-9)
    assert fit.b == pytest.approx(3.0, abs=1e-9)
    assert fit.c == pytest.approx(10.0, abs=1e-9)
    assert fit.residual_std == pytest.approx(0.0, abs=1e-9)


def test_saturation_point_vertex():
    # oracle: dS/dlogN = 2a logN + b = 0  =>  N* = exp(-b / 2a) = e^3
    fit = fit_log_quadratic(model_points(-0.5, 3.0, 10.0, SIX_N))
    assert fit.saturation_n == pytest.approx(math.exp(3.0), abs=1e-6)
    assert fit.saturation_n == pytest.approx(20.0855, abs=1e-3)


def test_degenerate_linear_no_saturation():
    pts = model_points(0.0, 2.0, 1.0, [10.0, 100.0, 1000.0])
    fit = fit_log_quadratic(pts)
    assert abs(fit.a) < 1e-9
    assert fit.saturation_n is None


def test_positive_curvature_no_saturation():
    fit = fit_log_quadratic(model_points(0.5, -1.0, 2.0, SIX_N))
    assert fit.saturation_n is None


def test_fit_order_invariant():
    pts = model_points(-0.2, 1.5, 3.0, SIX_N, noise=0.1, rng=random.Random(3))
    fit1 = fit_log_quadratic(pts)
    fit2 = fit_log_quadratic(list(reversed(pts)))
    assert fit1.a == pytest.approx(fit2.a, abs=1e-12)
    assert fit1.b == pytest.approx(fit2.b, abs=1e-12)
    assert fit1.c == pytest.approx(fit2.c, abs=1e-12)


def test_residual_orthogonality():
    rng = random.Random(11)
    pts = model_points(-0.3, 2.0, 5.0, [2.0, 7.0, 20.0, 55.0, 150.0, 400.0], noise=0.3, rng=rng)
    fit = fit_log_quadratic(pts)
    ln = np.log([p.n for p in pts])
    X = np.stack([ln * ln, ln, np.ones_like(ln)], axis=1)
    resid = np.array([p.s for p in pts]) - X @ np.array([fit.a, fit.b, fit.c])
    for col in range(3):
        assert abs(float(resid @ X[:, col])) < 1e-8


def test_fit_preconditions():
    with pytest.raises(FitError):
        fit_log_quadratic(model_points(1, 1, 1, [2.0, 3.0]))
    with pytest.raises(FitError):
        fit_log_quadratic(
            [ScalingPoint(5.0, 1.0), ScalingPoint(5.0, 2.0), ScalingPoint(5.0, 3.0)]
        )
    with pytest.raises(FitError):
        ScalingPoint(n=0.0, s=1.0)
    with pytest.raises(FitError):
        ScalingPoint(n=-3.0, s=1.0)
    with pytest.raises(FitError):
        ScalingPoint(n=10.0, s=float("nan"))


def test_noisy_recovery_within_three_stderr():
    """Seeded trials: the generator coefficients fall within 3 estimated
    standard errors at least 95 times out of 100."""
    true = (-0.5, 3.0, 10.0)
    ns = [10.0 * 1.9 ** k for k in range(20)]
    passes = 0
    for seed in range(100):
        rng = random.Random(seed)
        pts = model_points(*true, ns, noise=0.1, rng=rng)
        fit = fit_log_quadratic(pts)
        assert fit.stderr is not None
        ok = all(
            abs(got - want) <= 3.0 * se
            for got, want, se in zip((fit.a, fit.b, fit.c), true, fit.stderr)
        )
        passes += ok
    assert passes >= 95


def test_emit_curve_zero_residual_band_collapses():
    fit = fit_log_quadratic(model_points(-0.5, 3.0, 10.0, SIX_N))
    rows = emit_curve(fit, (10.0, 100.0), 16)
    for n, s_fit, s_lo, s_hi in rows:
        assert s_lo == pytest.approx(s_fit, abs=1e-9)
        assert s_hi == pytest.approx(s_fit, abs=1e-9)


def test_emit_curve_two_samples_exact_endpoints():
    fit = FitResult(a=-0.5, b=3.0, c=10.0, residual_std=0.2, saturation_n=math.e**3, count=6)
    rows = emit_curve(fit, (5.0, 500.0), 2)
    assert rows[0][0] == 5.0
    assert rows[-1][0] == 500.0


def test_emit_curve_direct_evaluation():
    # oracle: at n = e^2, s = -0.5*4 + 3*2 + 10 = 14
    fit = FitResult(a=-0.5, b=3.0, c=10.0, residual_std=0.0, saturation_n=math.e**3, count=6)
    rows = emit_curve(fit, (math.e**2, math.e**3), 2)
    assert rows[0][1] == pytest.approx(14.0, abs=1e-12)


def test_emit_curve_invalid_range():
    fit = FitResult(a=0.0, b=1.0, c=0.0, residual_std=0.0, saturation_n=None, count=3)
    with pytest.raises(FitError):
        emit_curve(fit, (10.0, 1.0), 8)
    with pytest.raises(FitError):
        emit_curve(fit, (1.0, 10.0), 1)


def test_compare_fits_flags():
    runs = {
        "saturating": model_points(-0.5, 3.0, 10.0, SIX_N),
        "linear": model_points(0.0, 2.0, 1.0, SIX_N),
    }
    report = compare_fits(runs)
    assert report["saturating"]["flag"] == FLAG_SATURATING
    assert report["linear"]["flag"] == FLAG_NON_SATURATING
    assert set(report.keys()) == {"saturating", "linear"}


def test_compare_fits_single_and_empty():
    assert compare_fits({}) == {}
    rep = compare_fits({"only": model_points(-0.1, 1.0, 0.0, SIX_N)})
    assert list(rep.keys()) == ["only"]


def test_saturation_flag_extrapolated():
    # vertex far outside the observed range
    fit = fit_log_quadratic(model_points(-0.001, 3.0, 1.0, SIX_N))
    assert fit.saturation_n is not None
    assert saturation_flag(fit, min(SIX_N), max(SIX_N)) == "saturating-extrapolated"
