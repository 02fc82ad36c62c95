"""The GMN distribution object: derived quantities, moments, densities,
closure operations, quadratic forms and Mardia measures."""

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from catalog import CATALOG, random_gmn, random_spd
from gmn import core
from gmn import families as fam
from gmn import mixing as mx
from gmn.core import GmnDistribution, Undefined
from gmn.errors import DimensionError, QuadratureError, ValidationError
from gmn.oracle import dense_mvn_pdf


def _normal_dist(xi, sigma):
    return GmnDistribution(xi, sigma, np.zeros(len(xi)), mx.MeanOnly(mx.Degenerate(1.0)))


class TestConstruction:
    def test_dimension_checks(self):
        with pytest.raises(DimensionError):
            GmnDistribution([0.0, 0.0], np.eye(2), [1.0], CATALOG["sn"])
        with pytest.raises(ValidationError):
            GmnDistribution([0.0], [[-1.0]], [1.0], CATALOG["sn"])

    def test_immutable(self):
        dist = GmnDistribution([0.0], [[1.0]], [1.0], CATALOG["sn"])
        with pytest.raises(ValueError):
            dist.xi[0] = 3.0

    def test_json_round_trip(self):
        dist = random_gmn(np.random.default_rng(0), CATALOG["est9"], 3)
        assert core.gmn_from_json(dist.to_json()) == dist


class TestDerive:
    def test_symmetric(self):
        sigma = random_spd(np.random.default_rng(1), 3)
        der = core.derive(GmnDistribution(np.zeros(3), sigma, np.zeros(3), CATALOG["sn"]))
        np.testing.assert_allclose(der.omega.matrix, sigma)
        assert der.alpha_sq == 0.0 and der.delta_sq == 0.0
        np.testing.assert_array_equal(der.eta, 0.0)

    def test_forced_values(self):
        der = core.derive(GmnDistribution(np.zeros(2), np.eye(2), [1.0, 0.0], CATALOG["sn"]))
        assert der.alpha_sq == 1.0 and der.delta_sq == 0.5
        np.testing.assert_allclose(der.eta, [1.0 / math.sqrt(2.0), 0.0], rtol=1e-15)

    def test_tau_bar(self):
        der = core.derive(GmnDistribution(np.zeros(2), np.eye(2), [1.0, 0.0], mx.MeanOnly(mx.TruncatedNormalBelow(0.5))))
        assert der.tau_bar == pytest.approx(math.sqrt(2.0) * 0.5, rel=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_dense_inverse_identity(self, seed):
        rng = np.random.default_rng(seed)
        dist = random_gmn(rng, CATALOG["sn"], 4)
        der = dist.derived
        omega_inv = np.linalg.inv(dist.sigma.matrix + np.outer(dist.gamma, dist.gamma))
        assert dist.gamma @ omega_inv @ dist.gamma == pytest.approx(der.delta_sq, rel=1e-12)
        np.testing.assert_allclose(der.omega_inv, omega_inv, rtol=1e-10, atol=1e-12)
        assert np.linalg.matrix_rank(der.omega.matrix - dist.sigma.matrix, tol=1e-10) <= 1


class TestMoments:
    def test_exponential_mean_mixture(self):
        xi, sigma, gamma = np.array([1.0, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]]), np.array([0.5, 2.0])
        dist = GmnDistribution(xi, sigma, gamma, CATALOG["mmmne"])
        np.testing.assert_allclose(core.mean(dist), xi + gamma, rtol=1e-15)
        np.testing.assert_allclose(core.covariance(dist), np.outer(gamma, gamma) + sigma, rtol=1e-15)

    def test_cauchy_scale_is_undefined(self):
        dist = GmnDistribution([0.0], [[1.0]], [0.0], mx.ScaleOnly(mx.InverseChiSqScaled(1.0)))
        assert isinstance(core.covariance(dist), Undefined)
        assert isinstance(core.mean(dist), Undefined)
        assert not core.covariance(dist)

    def test_gh_mean_covariance_mc(self):
        rng = np.random.default_rng(2)
        dist = random_gmn(rng, CATALOG["gh"], 2)
        y = dist.sample(rng, 1_000_000)
        np.testing.assert_allclose(y.mean(axis=0), core.mean(dist), rtol=0.01, atol=0.01)
        np.testing.assert_allclose(np.cov(y.T), core.covariance(dist), rtol=0.01, atol=0.01)


class TestSampling:
    def test_normal_reduction(self):
        rng = np.random.default_rng(3)
        xi, sigma = np.array([1.0, 2.0]), np.array([[1.0, 0.5], [0.5, 2.0]])
        y = _normal_dist(xi, sigma).sample(rng, 50_000)
        np.testing.assert_allclose(np.cov(y.T), sigma, atol=0.05)
        np.testing.assert_allclose(y.mean(axis=0), xi, atol=0.02)

    def test_sn_mean(self):
        rng = np.random.default_rng(4)
        xi, gamma = np.array([0.0, 1.0]), np.array([1.0, -2.0])
        dist = GmnDistribution(xi, np.eye(2), gamma, CATALOG["sn"])
        y = dist.sample(rng, 100_000)
        se = y.std(axis=0) / math.sqrt(y.shape[0])
        assert np.all(np.abs(y.mean(axis=0) - (xi + math.sqrt(2 / math.pi) * gamma)) < 4 * se)

    def test_t_covariance(self):
        rng = np.random.default_rng(5)
        sigma = np.array([[1.0, 0.4], [0.4, 1.5]])
        dist = GmnDistribution(np.zeros(2), sigma, np.zeros(2), mx.ScaleOnly(mx.InverseChiSqScaled(5.0)))
        y = dist.sample(rng, 100_000)
        np.testing.assert_allclose(np.cov(y.T), 5.0 / 3.0 * sigma, rtol=0.05)

    def test_reproducible(self):
        dist = random_gmn(np.random.default_rng(0), CATALOG["skew_t9"], 2)
        a = dist.sample(np.random.default_rng(9), 100)
        b = dist.sample(np.random.default_rng(9), 100)
        np.testing.assert_array_equal(a, b)


class TestDensity:
    def test_degenerate_is_normal(self):
        xi, sigma, gamma = np.array([0.5, -0.5]), np.array([[1.0, 0.2], [0.2, 0.7]]), np.array([1.0, 2.0])
        dist = GmnDistribution(xi, sigma, gamma, mx.MeanOnly(mx.Degenerate(1.0)))
        y = np.array([0.3, 1.1])
        assert core.pdf_numeric(dist, y) == pytest.approx(dense_mvn_pdf(y, xi + gamma, sigma), rel=1e-13)

    def test_contaminated_normal(self):
        xi, sigma = np.array([0.0, 1.0]), np.array([[1.0, 0.3], [0.3, 2.0]])
        dist = GmnDistribution(xi, sigma, np.zeros(2), mx.ScaleOnly(mx.TwoPoint(1.0, 9.0, 0.9)))
        y = np.array([1.5, -0.5])
        ref = 0.9 * dense_mvn_pdf(y, xi, sigma) + 0.1 * dense_mvn_pdf(y, xi, 9 * sigma)
        assert core.pdf_numeric(dist, y) == pytest.approx(ref, rel=1e-13)

    def test_sn_closed_form(self):
        rng = np.random.default_rng(6)
        params = fam.Sn(rng.standard_normal(2), random_spd(rng, 2), rng.standard_normal(2))
        y = params.xi + rng.standard_normal((5, 2))
        np.testing.assert_allclose(core.pdf_numeric(fam.to_gmn(params), y), fam.closed_pdf(params, y), rtol=1e-8)

    def test_normalization_1d(self):
        for name in ("two_piece", "slash", "gamma_vm", "est9"):
            dist = random_gmn(np.random.default_rng(7), CATALOG[name], 1)
            total = integrate.quad(lambda y: core.pdf_numeric(dist, [y]), -np.inf, np.inf, epsabs=1e-12, epsrel=1e-9, limit=200)[0]
            assert total == pytest.approx(1.0, abs=1e-7), name

    def test_rows_and_single(self):
        dist = random_gmn(np.random.default_rng(8), CATALOG["sn"], 2)
        y = np.array([[0.1, 0.2], [1.0, -1.0]])
        both = core.pdf_numeric(dist, y)
        assert both.shape == (2,)
        assert both[1] == pytest.approx(core.pdf_numeric(dist, y[1]), rel=1e-15)

    def test_failure_reports_estimate(self):
        # a jump inside the support defeats the double-exponential rule
        from gmn.quadrature import integrate_log

        with pytest.raises(QuadratureError) as info:
            integrate_log(CATALOG["sn"], lambda r, s: np.where(r < 1.2345, 0.0, -np.inf))
        assert info.value.value == pytest.approx(np.log(2 * stats.norm.cdf(1.2345) - 1), abs=1e-2)
        assert info.value.error > 1e-10

    def test_convolution_closure(self):
        # Y + N(mu, s2) has the GMN law with location xi + mu and Sigma + s2
        dist = GmnDistribution([0.3], [[0.8]], [1.4], CATALOG["rayleigh"])
        mu, s2 = -0.4, 0.5
        conv = GmnDistribution([0.3 + mu], [[0.8 + s2]], [1.4], CATALOG["rayleigh"])
        for y in (-1.0, 0.5, 2.5):
            direct = integrate.quad(
                lambda x: core.pdf_numeric(dist, [y - x]) * stats.norm.pdf(x, mu, math.sqrt(s2)), -np.inf, np.inf, epsrel=1e-10
            )[0]
            assert core.pdf_numeric(conv, [y]) == pytest.approx(direct, rel=1e-6)


class TestCdf:
    def test_infinite_corner(self):
        dist = random_gmn(np.random.default_rng(9), CATALOG["sn"], 2)
        assert core.cdf(dist, [np.inf, np.inf], rng=np.random.default_rng(0)).value == 1.0

    def test_symmetric_median(self):
        dist = GmnDistribution([0.7], [[2.0]], [0.0], CATALOG["t9"])
        assert core.cdf(dist, [0.7]).value == pytest.approx(0.5, abs=1e-12)

    def test_sn_empirical(self):
        rng = np.random.default_rng(10)
        dist = GmnDistribution([0.0], [[1.0 + 4.0]], [2.0], CATALOG["sn"])
        n = 1_000_000
        emp = np.mean(dist.sample(rng, n)[:, 0] <= 0.0)
        val = core.cdf(dist, [0.0]).value
        assert abs(val - emp) < 3 * math.sqrt(val * (1 - val) / n)

    def test_bivariate_mc(self):
        rng = np.random.default_rng(11)
        dist = random_gmn(rng, CATALOG["gh"], 2)
        y = core.mean(dist)
        est = core.cdf(dist, y, rng=np.random.default_rng(1), budget=100_000)
        n = 400_000
        draws = dist.sample(rng, n)
        emp = np.mean(np.all(draws <= y, axis=1))
        assert abs(est.value - emp) < 3 * math.hypot(est.se, math.sqrt(emp * (1 - emp) / n))

    def test_thread_count_does_not_change_result(self, monkeypatch):
        dist = random_gmn(np.random.default_rng(12), CATALOG["sn"], 3)
        y = dist.xi + 0.5
        monkeypatch.setenv("GMN_THREADS", "1")
        a = core.cdf(dist, y, rng=np.random.default_rng(5), budget=50_000)
        monkeypatch.setenv("GMN_THREADS", "4")
        b = core.cdf(dist, y, rng=np.random.default_rng(5), budget=50_000)
        assert a == b

    def test_budget_floor(self):
        with pytest.raises(ValidationError):
            core.cdf(random_gmn(np.random.default_rng(0), CATALOG["sn"], 2), [0.0, 0.0], rng=np.random.default_rng(0), budget=10)


class TestCharFunction:
    def test_origin(self):
        assert core.char_function(random_gmn(np.random.default_rng(0), CATALOG["sn"], 2), [0.0, 0.0]) == 1.0

    def test_degenerate_normal(self):
        xi, sigma, gamma = np.array([0.5, 1.0]), np.array([[1.0, 0.2], [0.2, 0.5]]), np.array([1.0, -1.0])
        dist = GmnDistribution(xi, sigma, gamma, mx.MeanOnly(mx.Degenerate(1.0)))
        t = np.array([0.3, -0.7])
        ref = cmath.exp(1j * t @ (xi + gamma) - 0.5 * t @ sigma @ t)
        assert abs(core.char_function(dist, t) - ref) < 1e-14

    def test_sn_fourier(self):
        params = fam.Sn([0.2], [[1.3]], [1.1])
        dist = fam.to_gmn(params)
        for t in (-1.0, -0.5, 0.5, 1.0):
            re = integrate.quad(lambda y: math.cos(t * y) * fam.closed_pdf(params, [y]), -np.inf, np.inf, epsabs=1e-12)[0]
            im = integrate.quad(lambda y: math.sin(t * y) * fam.closed_pdf(params, [y]), -np.inf, np.inf, epsabs=1e-12)[0]
            assert abs(core.char_function(dist, [t]) - complex(re, im)) < 1e-6


class TestAffineMarginal:
    def test_identity(self):
        dist = random_gmn(np.random.default_rng(13), CATALOG["sn"], 3)
        assert core.affine(dist, np.zeros(3), np.eye(3)) == dist
        assert core.marginal(dist, [0, 1, 2]) == dist

    def test_first_coordinate(self):
        dist = random_gmn(np.random.default_rng(14), CATALOG["gh"], 3)
        uni = core.affine(dist, [0.0], np.eye(3)[:, :1])
        assert uni.xi[0] == dist.xi[0] and uni.gamma[0] == dist.gamma[0]
        assert uni.sigma.matrix[0, 0] == dist.sigma.matrix[0, 0]
        assert uni.mixing == dist.mixing

    def test_rank_deficient(self):
        dist = random_gmn(np.random.default_rng(15), CATALOG["sn"], 2)
        with pytest.raises(ValidationError):
            core.affine(dist, [0.0, 0.0], np.array([[1.0, 2.0], [1.0, 2.0]]))

    def test_marginal_is_selection_affine(self):
        dist = random_gmn(np.random.default_rng(16), CATALOG["skew_t9"], 4)
        sel = np.eye(4)[:, [3, 1]]
        assert core.marginal(dist, [3, 1]) == core.affine(dist, np.zeros(2), sel)

    def test_composition(self):
        rng = np.random.default_rng(17)
        dist = random_gmn(rng, CATALOG["sn"], 3)
        b1, B1 = rng.standard_normal(3), rng.standard_normal((3, 3))
        b2, B2 = rng.standard_normal(2), rng.standard_normal((3, 2))
        twice = core.affine(core.affine(dist, b1, B1), b2, B2)
        once = core.affine(dist, b2 + B2.T @ b1, B1 @ B2)
        np.testing.assert_allclose(twice.xi, once.xi, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(twice.gamma, once.gamma, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(twice.sigma.matrix, once.sigma.matrix, rtol=1e-12, atol=1e-12)

    def test_bad_indices(self):
        dist = random_gmn(np.random.default_rng(18), CATALOG["sn"], 3)
        for idx in ([], [0, 0], [3]):
            with pytest.raises(ValidationError):
                core.marginal(dist, idx)

    def test_independence_factorization(self):
        sigma = np.array([[1.0, 0.4, 0.0], [0.4, 2.0, 0.0], [0.0, 0.0, 0.7]])
        dist = GmnDistribution([0.1, -0.2, 0.3], sigma, [1.0, -0.5, 0.0], CATALOG["mmmne"])
        m1, m2 = core.marginal(dist, [0, 1]), core.marginal(dist, [2])
        y = np.random.default_rng(19).standard_normal((5, 3))
        joint = core.pdf_numeric(dist, y)
        np.testing.assert_allclose(joint, core.pdf_numeric(m1, y[:, :2]) * core.pdf_numeric(m2, y[:, 2:]), rtol=1e-8)


class TestConditional:
    def test_normal(self):
        sigma = np.array([[1.0, 0.5], [0.5, 2.0]])
        dist = GmnDistribution([1.0, 2.0], sigma, [0.0, 0.0], mx.MeanOnly(mx.Degenerate(0.0)))
        cond = core.conditional(dist, [1], [3.0])
        assert cond.xi[0] == pytest.approx(1.0 + 0.5 / 2.0 * 1.0, rel=1e-15)
        assert cond.sigma.matrix[0, 0] == pytest.approx(1.0 - 0.25 / 2.0, rel=1e-15)
        assert cond.pdf([1.3]) == pytest.approx(stats.norm.pdf(1.3, 1.25, math.sqrt(0.875)), rel=1e-12)

    def test_student_t_at_location(self):
        sigma = np.array([[1.0, 0.6], [0.6, 2.0]])
        dist = fam.to_gmn(fam.StudentT([0.0, 1.0], sigma, 4.0))
        cond = core.conditional(dist, [1], [1.0])
        assert cond.student_t.df == 5.0
        np.testing.assert_allclose(cond.student_t.scale.matrix, 0.8 * (1.0 - 0.36 / 2.0), rtol=1e-14)

    def test_bayes_ratio(self):
        rng = np.random.default_rng(20)
        dist = random_gmn(rng, CATALOG["sn"], 2)
        y = dist.sample(rng, 5)
        marg = core.marginal(dist, [1])
        for row in y:
            cond = core.conditional(dist, [1], row[1:])
            ratio = core.pdf_numeric(dist, row) / core.pdf_numeric(marg, row[1:])
            assert cond.pdf(row[:1]) == pytest.approx(ratio, rel=1e-7)

    def test_nothing_left(self):
        dist = random_gmn(np.random.default_rng(21), CATALOG["sn"], 2)
        with pytest.raises(ValidationError):
            core.conditional(dist, [0, 1], [0.0, 0.0])

    def test_sample_mean(self):
        rng = np.random.default_rng(22)
        dist = random_gmn(rng, CATALOG["mmmne"], 2)
        cond = core.conditional(dist, [0], [dist.xi[0] + 1.0])
        draws = cond.sample(rng, 200_000)
        assert draws.mean() == pytest.approx(cond.mean()[0], abs=5 * draws.std() / math.sqrt(draws.size))


class TestQuadForms:
    def test_sn_expected_q0(self):
        dist = random_gmn(np.random.default_rng(23), CATALOG["sn"], 3)
        assert core.quad_form_report(dist).e_q == pytest.approx(3.0, rel=1e-12)

    def test_sn_scale_mix_gamma_free(self):
        dist = random_gmn(np.random.default_rng(24), CATALOG["skew_t9"], 2)
        assert core.quad_form_report(dist).gamma_free

    def test_rayleigh_value(self):
        # Sigma = I and |gamma|^2 = 1 give delta^2 = 1/2
        dist = GmnDistribution(np.zeros(3), np.eye(3), [1.0, 0.0, 0.0], CATALOG["rayleigh"])
        assert core.quad_form_report(dist).e_q == pytest.approx(3.5, rel=1e-14)

    def test_undefined_in_band(self):
        dist = GmnDistribution([0.0], [[1.0]], [0.0], mx.ScaleOnly(mx.InverseChiSqScaled(2.0)))
        rep = core.quad_form_report(dist)
        assert isinstance(rep.e_q, Undefined) and "infinite" in rep.e_q.reason

    def test_decomposition(self):
        rng = np.random.default_rng(25)
        dist = random_gmn(rng, CATALOG["rayleigh"], 3)
        ds = core.sample_q0_decomposition(dist, rng, 20_000)
        np.testing.assert_allclose(ds.w_sq + ds.v0_sq, ds.q0, rtol=1e-10, atol=1e-12)
        assert stats.kstest(ds.v0_sq, stats.chi2(2).cdf).pvalue > 0.01


class TestMardia:
    def test_normal(self):
        for d in (1, 2, 5):
            rep = core.mardia(_normal_dist(np.zeros(d), np.eye(d)))
            assert rep.beta1 == 0.0 and rep.beta2 == pytest.approx(d * (d + 2), rel=1e-15)

    def test_sn_univariate_quadrature(self):
        params = fam.Sn([0.3], [[1.2]], [1.7])
        pdf = lambda y: fam.closed_pdf(params, [y])
        m1 = integrate.quad(lambda y: y * pdf(y), -np.inf, np.inf, epsabs=0, epsrel=1e-13)[0]
        mom = [integrate.quad(lambda y, k=k: (y - m1) ** k * pdf(y), -np.inf, np.inf, epsabs=0, epsrel=1e-13)[0]
               for k in (2, 3, 4)]
        rep = core.mardia(fam.to_gmn(params))
        assert rep.beta1 == pytest.approx(mom[1] ** 2 / mom[0] ** 3, rel=1e-10)
        assert rep.beta2 == pytest.approx(mom[2] / mom[0] ** 2, rel=1e-10)

    def test_t_nu4_kurtosis_undefined(self):
        rep = fam.family_mardia(fam.StudentT([0.0, 0.0], np.eye(2), 4.0))
        assert rep.beta1 == 0.0
        assert isinstance(rep.beta2, Undefined)

    @pytest.mark.parametrize("name", sorted(CATALOG))
    def test_affine_invariance(self, name):
        rng = np.random.default_rng(26)
        dist = random_gmn(rng, CATALOG[name], 3)
        b, B = rng.standard_normal(3), rng.standard_normal((3, 3)) + 2 * np.eye(3)
        a, c = core.mardia(dist), core.mardia(core.affine(dist, b, B))
        assert c.beta1 == pytest.approx(a.beta1, rel=1e-9, abs=1e-12)
        assert c.beta2 == pytest.approx(a.beta2, rel=1e-9)

    @pytest.mark.parametrize("name", ["sn", "esn", "mmmne", "rayleigh", "chi3", "chi_frac", "two_piece"])
    def test_mean_mixture_paths(self, name):
        dist = random_gmn(np.random.default_rng(27), CATALOG[name], 3)
        rep = core.mardia(dist)
        special_b1, special_b2 = rep.mean_mixture
        assert special_b1 == pytest.approx(rep.beta1, rel=1e-12)
        assert special_b2 == pytest.approx(rep.beta2, rel=1e-12)
        inter = rep.intermediates
        assert inter.beta1_remark == pytest.approx(rep.beta1, rel=1e-12)
        assert inter.beta2_remark == pytest.approx(rep.beta2, rel=1e-12)
        # for mean mixtures the remark form collapses onto the Z0 coefficients
        assert inter.beta1_z0 == pytest.approx(rep.beta1, rel=1e-12)
        assert 3 * 5 + inter.beta2_z0 - 3 == pytest.approx(rep.beta2, rel=1e-12)

    def test_mc_variance_mean(self):
        rng = np.random.default_rng(28)
        dist = random_gmn(rng, CATALOG["gh"], 2)
        from gmn.oracle import mardia_mc

        rep = core.mardia(dist)
        b1, se1, b2, se2 = mardia_mc(dist.sample(rng, 200_000), core.mean(dist), core.covariance(dist), rng=rng)
        assert abs(b1 - rep.beta1) < 3 * se1
        assert abs(b2 - rep.beta2) < 3 * se2
