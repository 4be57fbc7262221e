import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cafe.numerics import (chi2_survival, gumbel_constants, gumbel_quantile, gumbel_survival,
                           normal_quantile)

import oracles


class TestChi2Survival:
    def test_zero(self):
        assert chi2_survival(0, 5) == 1.0

    def test_five_percent_point(self):
        # quadrature oracle gives 0.0500000202
        assert chi2_survival(7.814727, 3) == pytest.approx(0.05, abs=1e-6)

    def test_far_tail(self):
        assert 0 <= chi2_survival(1000, 3) < 1e-12

    @pytest.mark.parametrize("t, k", [(-1.0, 3), (1.0, 0), (1.0, -2), (1.0, 2.5)])
    def test_domain(self, t, k):
        with pytest.raises(ValueError):
            chi2_survival(t, k)

    @pytest.mark.parametrize("k", [1, 2, 3, 5, 10, 37, 100])
    def test_against_quadrature(self, k):
        for t in [0.01, 0.5, 1.0, 2.0, 7.5, 15.0, 40.0, 99.0, 150.0, 200.0]:
            assert chi2_survival(t, k) == pytest.approx(oracles.chi2_tail_quad(t, k), abs=1e-10)

    def test_monotone_grid(self):
        ts = np.linspace(0.1, 60, 120)
        for k in range(1, 30):
            vals = [chi2_survival(t, k) for t in ts]
            # strictness is only visible where doubles can resolve it
            assert all(b < a for a, b in zip(vals, vals[1:]) if a < 1.0 and b > 1e-300)
        for t in ts:
            vals = [chi2_survival(t, k) for k in range(1, 30)]
            assert all(b > a for a, b in zip(vals, vals[1:]) if b < 1.0)


class TestNormalQuantile:
    def test_median(self):
        assert normal_quantile(0.5) == 0.0

    def test_975(self):
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-5)

    def test_a_k_for_three_groups(self):
        assert normal_quantile(1 - 1 / 6) == pytest.approx(0.967422, abs=1e-5)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
    def test_domain(self, p):
        with pytest.raises(ValueError):
            normal_quantile(p)

    @pytest.mark.parametrize("p", [1e-12, 1e-9, 1e-5, 0.01, 0.02425, 0.3, 0.7, 0.97575, 0.999, 1 - 1e-9, 1 - 1e-12])
    def test_against_bisection(self, p):
        assert normal_quantile(p) == pytest.approx(oracles.normal_quantile_bisect(p), abs=1e-9)

    @given(st.floats(-6, 6))
    def test_roundtrip(self, z):
        assert normal_quantile(oracles.phi_erf(z)) == pytest.approx(z, abs=1e-8)


class TestGumbel:
    def test_zero(self):
        assert gumbel_survival(0) == pytest.approx(1 - math.exp(-1), abs=1e-12)

    def test_right_tail_no_underflow(self):
        v = gumbel_survival(38)
        assert 1e-300 < v < 1e-15

    def test_left_limit(self):
        assert gumbel_survival(-5) == pytest.approx(1.0, abs=1e-10)
        assert gumbel_survival(-1000) == 1.0

    def test_not_finite(self):
        with pytest.raises(ValueError):
            gumbel_survival(float("inf"))

    @given(st.floats(1e-6, 1 - 1e-6))
    def test_roundtrip(self, p):
        assert gumbel_survival(gumbel_quantile(p)) == pytest.approx(p, abs=1e-10)

    @given(st.floats(-30, 30), st.floats(1e-3, 5))
    def test_decreasing(self, g, h):
        assert gumbel_survival(g + h) <= gumbel_survival(g)

    def test_constants(self):
        a, b = gumbel_constants(3)
        assert a == pytest.approx(0.9674215661, abs=1e-9)
        assert b == pytest.approx(1 / a)
        with pytest.raises(ValueError):
            gumbel_constants(1)
