"""Special functions and small linear-algebra kernels.

Reference values were computed once with mpmath at 30 significant digits
and are frozen here.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from gmn.errors import DimensionError, ValidationError
from gmn.specfun import (
    SpdMatrix,
    TruncNormSpec,
    bessel_k,
    log_bessel_k,
    log_zeta,
    mahalanobis_sq,
    mvn_logpdf,
    sherman_morrison_inv,
    std_normal_cdf,
    student_t_cdf,
    truncnorm_moment,
    truncnorm_moments,
    zeta,
)


def _random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


class TestSpdMatrix:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            SpdMatrix([[1.0, 0.5], [0.4, 1.0]])

    def test_rejects_indefinite(self):
        with pytest.raises(ValidationError):
            SpdMatrix([[1.0, 2.0], [2.0, 1.0]])

    def test_cached_quantities(self):
        a = np.array([[4.0, 1.0], [1.0, 3.0]])
        m = SpdMatrix(a)
        np.testing.assert_allclose(m.chol @ m.chol.T, a, rtol=1e-15)
        assert m.logdet == pytest.approx(math.log(11.0), rel=1e-15)
        np.testing.assert_allclose(m.inv, np.linalg.inv(a), rtol=1e-14)
        np.testing.assert_allclose(m.solve([1.0, 2.0]), np.linalg.solve(a, [1.0, 2.0]), rtol=1e-14)

    def test_equality_and_hash(self):
        a = SpdMatrix(np.eye(2))
        b = SpdMatrix([[1.0, 0.0], [0.0, 1.0]])
        assert a == b and hash(a) == hash(b)


class TestMahalanobis:
    def test_zero_vector(self):
        assert mahalanobis_sq(np.zeros(3), SpdMatrix(_random_spd(np.random.default_rng(0), 3))) == 0.0

    def test_identity(self):
        assert mahalanobis_sq([1.0, 2.0, 2.0], SpdMatrix(np.eye(3))) == pytest.approx(9.0, rel=1e-15)

    def test_two_by_two(self):
        assert mahalanobis_sq([1.0, 1.0], SpdMatrix([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(2.0 / 3.0, rel=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            mahalanobis_sq([1.0, 2.0], SpdMatrix(np.eye(3)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_nonnegative_zero_only_at_origin(self, d, seed):
        rng = np.random.default_rng(seed)
        sigma = SpdMatrix(_random_spd(rng, d))
        x = rng.standard_normal(d)
        assert mahalanobis_sq(x, sigma) > 0.0
        assert mahalanobis_sq(x, sigma) == pytest.approx(x @ np.linalg.inv(sigma.matrix) @ x, rel=1e-10)


class TestShermanMorrison:
    def test_null_update(self):
        a_inv = np.linalg.inv(_random_spd(np.random.default_rng(1), 3))
        np.testing.assert_array_equal(sherman_morrison_inv(a_inv, np.zeros(3), np.ones(3)), a_inv)

    def test_identity_update(self):
        e1 = np.array([1.0, 0.0])
        np.testing.assert_allclose(sherman_morrison_inv(np.eye(2), e1, e1), np.eye(2) - 0.5 * np.outer(e1, e1))

    def test_dense_oracle(self):
        rng = np.random.default_rng(2)
        a = _random_spd(rng, 3)
        b = rng.standard_normal(3)
        np.testing.assert_allclose(
            sherman_morrison_inv(np.linalg.inv(a), b, b), np.linalg.inv(a + np.outer(b, b)), rtol=1e-12, atol=1e-14
        )

    def test_singular_update(self):
        e1 = np.array([1.0, 0.0])
        with pytest.raises(ValidationError):
            sherman_morrison_inv(np.eye(2), e1, -e1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_product_is_identity(self, d, seed):
        rng = np.random.default_rng(seed)
        a = _random_spd(rng, d)
        b, c = rng.standard_normal(d), rng.standard_normal(d)
        if abs(1.0 + c @ np.linalg.solve(a, b)) < 1e-3:
            return
        inv = sherman_morrison_inv(np.linalg.inv(a), b, c)
        np.testing.assert_allclose(inv @ (a + np.outer(b, c)), np.eye(d), atol=1e-10)


class TestZeta:
    def test_origin(self):
        assert zeta(0.0) == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-15)

    def test_left_tail_asymptote(self):
        assert zeta(-40.0) == pytest.approx(40.0 + 1.0 / 40.0, rel=1e-6)

    def test_frozen_values(self):
        np.testing.assert_allclose(
            zeta(np.array([10.0, -40.0, -8.5, 3.0])),
            [7.6945986267064193463e-23, 40.024968847207263723, 8.6145953201651728741, 0.0044378390421256637933],
            rtol=1e-13,
        )

    def test_right_tail_tiny(self):
        assert zeta(10.0) < 1e-20

    def test_log_zeta_deep_tail_finite(self):
        assert np.isfinite(log_zeta(-1e6)) and np.isfinite(log_zeta(60.0))

    def test_positive_and_decreasing(self):
        t = np.linspace(-50.0, 35.0, 4001)
        z = zeta(t)
        assert np.all(z > 0.0)
        assert np.all(np.diff(z) < 0.0)


class TestTruncNormMoments:
    def test_normalization(self):
        assert truncnorm_moment(TruncNormSpec(1.7, 0)) == 1.0

    def test_half_line(self):
        assert truncnorm_moment(TruncNormSpec(0.0, 1)) == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-15)
        assert truncnorm_moment(TruncNormSpec(0.0, 2)) == pytest.approx(1.0, rel=1e-14)

    def test_frozen_values(self):
        cases = [(-2.0, 5, 2.2099145071595983641), (1.5, 4, 18.267082687152527617), (4.0, 3, 76.06092860081047931),
                 (-6.0, 8, 104.99791865772067681), (6.0, 8, 2109742.4840475887159)]
        for a, k, ref in cases:
            assert truncnorm_moment(TruncNormSpec(a, k)) == pytest.approx(ref, rel=1e-12)

    def test_degree_bound(self):
        with pytest.raises(ValidationError):
            TruncNormSpec(0.0, 13)

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_quadrature_grid(self):
        for a in np.linspace(-6.0, 6.0, 13):
            m = truncnorm_moments(a, 8)
            tail = stats.norm.sf(a)
            for k in range(9):
                ref = integrate.quad(lambda w: w**k * stats.norm.pdf(w), a, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0] / tail
                assert m[k] == pytest.approx(ref, rel=1e-9, abs=1e-12)

    def test_vectorized_shape(self):
        assert truncnorm_moments(np.zeros((3, 2)), 4).shape == (3, 2, 5)


class TestBesselK:
    def test_half_integer(self):
        assert bessel_k(0.5, 2.0) == pytest.approx(math.sqrt(math.pi / 4.0) * math.exp(-2.0), rel=1e-14)

    def test_order_symmetry(self):
        assert bessel_k(-0.7, 1.3) == bessel_k(0.7, 1.3)

    def test_frozen_values(self):
        cases = [(1.0, 1.0, 0.60190723019723457474), (0.0, 0.1, 2.4270690247020165578),
                 (2.5, 3.7, 0.032700514975185733994), (0.3, 0.01, 6.8901026382927695432),
                 (7.2, 1.5, 3808.747819925332742), (-1.4, 25.0, 3.5999121544972085517e-12),
                 (12.0, 0.5, 332949783210192.08318)]
        for order, x, ref in cases:
            assert bessel_k(order, x) == pytest.approx(ref, rel=1e-12)

    def test_log_scale_large_argument(self):
        assert log_bessel_k(0.7, 800.0) == pytest.approx(-803.11636460482693788, rel=1e-14)

    def test_half_integer_family(self):
        x = np.linspace(0.05, 40.0, 50)
        k_half = np.sqrt(np.pi / (2 * x)) * np.exp(-x)
        np.testing.assert_allclose(bessel_k(0.5, x), k_half, rtol=1e-12)
        np.testing.assert_allclose(bessel_k(1.5, x), k_half * (1.0 + 1.0 / x), rtol=1e-12)
        np.testing.assert_allclose(bessel_k(2.5, x), k_half * (1.0 + 3.0 / x + 3.0 / x**2), rtol=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            bessel_k(1.0, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.0, 10.0), st.floats(1e-3, 50.0))
    def test_recurrence(self, lam, x):
        # for lam >= 0 both right-hand terms are positive, so the identity is
        # well conditioned; negative orders follow from the symmetry test
        lhs = bessel_k(lam + 1.0, x)
        rhs = bessel_k(lam - 1.0, x) + 2.0 * lam / x * bessel_k(lam, x)
        assert lhs == pytest.approx(rhs, rel=1e-9)


class TestDensities:
    def test_mvn_origin(self):
        assert mvn_logpdf([0.0], [0.0], SpdMatrix([[1.0]])) == pytest.approx(-0.5 * math.log(2 * math.pi), rel=1e-15)

    def test_mvn_dense_oracle(self):
        rng = np.random.default_rng(4)
        a = _random_spd(rng, 3)
        y, mu = rng.standard_normal(3), rng.standard_normal(3)
        assert mvn_logpdf(y, mu, SpdMatrix(a)) == pytest.approx(stats.multivariate_normal(mu, a).logpdf(y), rel=1e-13)

    def test_student_t_cdf(self):
        assert student_t_cdf(0.0, 3.3) == 0.5
        assert student_t_cdf(1.0, 1.0) == pytest.approx(0.75, rel=1e-15)
        assert student_t_cdf(-2.0, 3.0) == pytest.approx(0.5 * 0.13932596855884316373, rel=1e-13)

    def test_std_normal_cdf(self):
        assert std_normal_cdf(0.0) == 0.5
