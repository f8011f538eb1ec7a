"""Tests for the USL capacity model and its fit."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vmtsim.optimizer.usl import FitError, UslDomainError, UslParams, fit_curve, fit_usl, fit_usl_detailed, usl_capacity


def reference_capacity(x: float, n: float, a0: float, a1: float, b0: float, b1: float) -> float:
    return x / (1 + (n * a0 + a1) * (x - 1)) + (n * b0 + b1) * x


class TestUslCapacity:
    """Tests for usl_capacity."""

    @given(st.floats(0, 1e6), st.integers(0, 64))
    def test_zero_params_identity(self, x, n):
        """Test vanishing coefficients give s = X."""
        assert usl_capacity(x, n, UslParams()) == pytest.approx(x)

    @given(st.integers(1, 16), st.floats(0, 0.1), st.floats(0, 0.1))
    def test_unit_load(self, n, b0, b1):
        """Test X = 1 gives 1 + b(n)."""
        params = UslParams(1e-3, 1e-2, b0, b1)
        assert usl_capacity(1.0, n, params) == pytest.approx(1 + n * b0 + b1)

    def test_direct_formula(self):
        """Test against an independent evaluation."""
        params = UslParams(1e-4, 1e-3, 0.0, 1e-3)
        expected = reference_capacity(100, 3, 1e-4, 1e-3, 0.0, 1e-3)
        assert usl_capacity(100, 3, params) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(100 / 1.1287 + 0.1, rel=1e-12)

    def test_non_positive_denominator(self):
        """Test a collapsing denominator raises."""
        with pytest.raises(UslDomainError):
            usl_capacity(0.0, 1, UslParams(0.0, 2.0))

    def test_negative_load(self):
        """Test negative offered load raises."""
        with pytest.raises(UslDomainError):
            usl_capacity(-1.0, 1, UslParams())


def synthetic_samples(params: UslParams, counts=(3, 4, 5), points: int = 40):
    xs = np.linspace(1.0, 100.0, points)
    return [(float(x), usl_capacity(float(x), n, params), n) for n in counts for x in xs]


class TestFitUsl:
    """Tests for fit_usl."""

    def test_recovers_known_params(self):
        """Test noiseless data recovers its generating parameters within 5%."""
        truth = UslParams(2e-4, 1e-3, 0.0, 5e-4)
        fitted = fit_usl(synthetic_samples(truth))
        assert fitted.alpha0 == pytest.approx(truth.alpha0, rel=0.05)
        assert fitted.alpha1 == pytest.approx(truth.alpha1, rel=0.05)
        assert fitted.beta1 == pytest.approx(truth.beta1, rel=0.05)
        assert abs(fitted.beta0) < 1e-5

    def test_identity_workload(self):
        """Test s = X fits all-zero coefficients."""
        samples = [(float(x), float(x), n) for n in (1, 2, 3) for x in range(1, 11)]
        fitted = fit_usl(samples)
        for value in (fitted.alpha0, fitted.alpha1, fitted.beta0, fitted.beta1):
            assert abs(value) < 1e-6

    def test_too_few_samples(self):
        """Test three samples are not enough."""
        with pytest.raises(FitError):
            fit_usl([(1.0, 1.0, 1), (2.0, 2.0, 2), (3.0, 3.0, 3)])

    def test_single_count(self):
        """Test samples from one PMU count cannot fit the n terms."""
        with pytest.raises(FitError):
            fit_usl([(float(x), float(x), 2) for x in range(1, 11)])

    def test_single_load_per_count(self):
        """Test a count observed at a single load is rejected."""
        samples = [(5.0, 5.0, 1)] * 4 + [(float(x), float(x), 2) for x in range(1, 5)]
        with pytest.raises(FitError):
            fit_usl(samples)

    def test_detailed_reports_per_count(self):
        """Test the detailed fit keeps the per-count curves."""
        truth = UslParams(2e-4, 1e-3, 0.0, 5e-4)
        fit = fit_usl_detailed(synthetic_samples(truth))
        assert sorted(fit.per_count) == [3, 4, 5]
        a3, _ = fit.per_count[3]
        assert a3 == pytest.approx(truth.a(3), rel=0.01)
        assert fit.rss < 1e-6

    def test_noisy_recovery(self):
        """Test 1% multiplicative noise still recovers the alphas within 15%."""
        truth = UslParams(2e-4, 1e-3, 0.0, 5e-4)
        rng = np.random.default_rng(5)
        samples = [
            (x, y * (1 + 0.01 * rng.standard_normal()), n)
            for x, y, n in synthetic_samples(truth, counts=range(1, 9), points=200)
        ]
        fitted = fit_usl(samples)
        assert fitted.alpha0 == pytest.approx(truth.alpha0, rel=0.15)
        assert fitted.alpha1 == pytest.approx(truth.alpha1, rel=0.15)
        for n in (2, 6):
            assert usl_capacity(80.0, n, fitted) == pytest.approx(usl_capacity(80.0, n, truth), rel=0.02)


class TestFitCurve:
    """Tests for the single-count curve fit."""

    def test_exact_curve(self):
        """Test one noiseless curve is recovered."""
        x = np.linspace(1.0, 50.0, 30)
        y = x / (1 + 0.01 * (x - 1)) + 0.002 * x
        a, b, sse = fit_curve(x, y)
        assert a == pytest.approx(0.01, rel=0.01)
        assert b == pytest.approx(0.002, rel=0.05)
        assert sse < 1e-8