"""Natural cubic spline basis: knots, evaluation, extrapolation and integrals."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson

from terminaltrend.splines import (KnotVector, SplineBasis, eval_basis, integrate_basis,
                                   place_knots)


def _kv(k1=6):
    return place_knots(np.linspace(0, 10, 101), k1)


class TestPlaceKnots:
    def test_median_knot(self):
        kv = place_knots(np.arange(11.0), 3)
        assert (kv.boundary_lo, kv.boundary_hi) == (0, 10)
        assert kv.interior == (5.0,)

    def test_two_knots_no_interior(self):
        kv = place_knots(np.arange(11.0), 2)
        assert kv.interior == () and kv.k1 == 2

    def test_sort_and_index_oracle(self):
        # 1001 points: the 20/40/60/80% levels fall exactly on order statistics
        times = np.random.default_rng(1).gamma(2.0, 5.0, 1001)
        kv = place_knots(times, 6)
        srt = np.sort(times)
        expect = [srt[200], srt[400], srt[600], srt[800]]
        np.testing.assert_array_equal(kv.interior, expect)
        assert kv.boundary_lo == srt[0] and kv.boundary_hi == srt[-1]

    def test_too_few_distinct(self):
        with pytest.raises(ValueError, match="distinct"):
            place_knots([1.0, 1.0, 2.0, 2.0], 3)

    def test_k1_below_two(self):
        with pytest.raises(ValueError):
            place_knots(np.arange(10.0), 1)

    def test_collapsing_quantiles_rejected(self):
        times = np.r_[np.zeros(50), 1.0, 2.0, 3.0]
        with pytest.raises(ValueError):
            place_knots(times, 4)

    def test_roundtrip_dict(self):
        kv = _kv()
        assert KnotVector.from_dict(kv.to_dict()) == kv

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            KnotVector(0.0, 10.0, (5.0, 3.0))


class TestEvaluation:
    def test_shape_and_scalar(self):
        b = SplineBasis(_kv())
        assert b(np.linspace(0, 12, 7)).shape == (7, 6)
        assert b(3.0).shape == (6,)

    def test_boundary_continuity(self):
        kv = _kv()
        b = SplineBasis(kv)
        lo = kv.boundary_lo
        np.testing.assert_allclose(b(lo), b(lo + 1e-10), atol=1e-8)
        np.testing.assert_allclose(b(kv.boundary_hi), b(kv.boundary_hi - 1e-10), atol=1e-8)

    def test_non_finite_rejected(self):
        b = SplineBasis(_kv())
        with pytest.raises(ValueError):
            b(np.array([1.0, np.nan]))

    def test_wrapper_matches_class(self):
        kv = _kv()
        np.testing.assert_array_equal(eval_basis(kv, 2.5), SplineBasis(kv)(2.5))

    def test_deterministic(self):
        kv = _kv()
        t = np.linspace(0, 20, 33)
        assert np.array_equal(SplineBasis(kv)(t), SplineBasis(kv)(t))

    @pytest.mark.parametrize("k1", [2, 3, 5, 8, 11])
    def test_linear_reproduction(self, k1):
        kv = _kv(k1)
        b = SplineBasis(kv)
        fit_t = np.linspace(0, 10, 4 * k1)
        coef, *_ = np.linalg.lstsq(b(fit_t), 3 + 2 * fit_t, rcond=None)
        t = np.linspace(0, 25, 500)
        assert np.max(np.abs(b(t) @ coef - (3 + 2 * t))) < 1e-8

    def test_extrapolation_collinear(self):
        kv = _kv(7)
        b = SplineBasis(kv)
        coef = np.random.default_rng(0).normal(size=7)
        hi = kv.boundary_hi
        f0, f2, f5 = (b(t) @ coef for t in (hi, hi + 2, hi + 5))
        assert abs((f2 - f0) / 2 - (f5 - f0) / 5) < 1e-8

    def test_c2_at_interior_knots(self):
        kv = _kv(7)
        b = SplineBasis(kv)
        coef = np.random.default_rng(2).normal(size=7)
        h = 1e-3
        f = lambda t: b(t) @ coef  # noqa: E731
        for k in kv.interior:
            # each side is one cubic piece, so these differences are exact up to rounding
            d2l = (f(k) - 2 * f(k - h) + f(k - 2 * h)) / h**2
            d3l = (f(k) - 3 * f(k - h) + 3 * f(k - 2 * h) - f(k - 3 * h)) / h**3
            d2r = (f(k + 2 * h) - 2 * f(k + h) + f(k)) / h**2
            d3r = (f(k + 3 * h) - 3 * f(k + 2 * h) + 3 * f(k + h) - f(k)) / h**3
            assert abs((d2l + h * d3l) - (d2r - h * d3r)) < 1e-4

    def test_zero_curvature_at_boundaries(self):
        kv = _kv(6)
        b = SplineBasis(kv)
        coef = np.random.default_rng(3).normal(size=6)
        h = 1e-4
        for t in (kv.boundary_lo + 2 * h, kv.boundary_hi - 2 * h):
            d2 = (b(t + h) - 2 * b(t) + b(t - h)) @ coef / h**2
            assert abs(d2) < 1e-2


class TestIntegration:
    def test_empty_interval(self):
        np.testing.assert_array_equal(integrate_basis(_kv(), 3.0, 3.0), np.zeros(6))

    def test_reversed_interval_rejected(self):
        with pytest.raises(ValueError):
            integrate_basis(_kv(), 4.0, 3.0)

    @pytest.mark.parametrize("a,b", [(0.0, 10.0), (1.3, 7.7), (2.0, 16.0), (11.0, 19.0)])
    def test_simpson_oracle(self, a, b):
        kv = _kv(6)
        basis = SplineBasis(kv)
        n = int(round((b - a) / 1e-3))
        t = np.linspace(a, b, n + 1)
        ref = simpson(basis(t), x=t, axis=0)
        np.testing.assert_allclose(basis.integrate(a, b), ref, atol=1e-7)

    def test_additive(self):
        basis = SplineBasis(_kv(8))
        whole = basis.integrate(0.0, 10.0)
        np.testing.assert_allclose(whole, basis.integrate(0.0, 3.7) + basis.integrate(3.7, 10.0),
                                   atol=1e-12)

    def test_vectorized_matches_scalar(self):
        basis = SplineBasis(_kv(5))
        a = np.array([0.0, 1.0, 9.0, 12.0])
        b = np.array([2.0, 11.0, 9.5, 30.0])
        many = basis.integrate_many(a, b)
        for i in range(4):
            np.testing.assert_allclose(many[i], basis.integrate(a[i], b[i]), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.floats(-5, 5), st.floats(-3, 3), st.floats(0, 30))
def test_linear_functions_in_span(k1, a, slope, t):
    kv = _kv(k1)
    b = SplineBasis(kv)
    fit_t = np.linspace(0, 10, 3 * k1)
    coef, *_ = np.linalg.lstsq(b(fit_t), a + slope * fit_t, rcond=None)
    assert abs(b(t) @ coef - (a + slope * t)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20))
def test_integral_additivity_property(x, y, z):
    a, m, c = sorted((x, y, z))
    basis = SplineBasis(_kv(6))
    np.testing.assert_allclose(basis.integrate(a, c),
                               basis.integrate(a, m) + basis.integrate(m, c), atol=1e-10)
