"""The independent oracles the other tests lean on."""

import math

import numpy as np
import pytest
from scipy import special, stats

from gmn.oracle import (
    adaptive_integrate,
    cubature2d,
    dense_mvn_pdf,
    ks_test,
    mardia_mc,
    mc_mean,
    two_sample_energy,
)


class TestQuadrature:
    def test_rayleigh_normalization(self):
        res = adaptive_integrate(lambda u: u * math.exp(-0.5 * u * u), 0.0, np.inf)
        assert res.value == pytest.approx(1.0, rel=1e-12)
        assert res.err_estimate >= 0.0 and res.evaluations > 0 and res.converged

    def test_normal_normalization(self):
        assert adaptive_integrate(stats.norm.pdf, -np.inf, np.inf).value == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("a", [0.5, 1.0, 2.7, 7.0])
    def test_gamma_gauge(self, a):
        res = adaptive_integrate(lambda x: x ** (a - 1) * math.exp(-x), 0.0, np.inf, tol=1e-12)
        assert res.value == pytest.approx(special.gamma(a), rel=1e-10)

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_non_convergence_is_reported(self):
        res = adaptive_integrate(lambda x: math.sin(1.0 / x) / x, 1e-8, 1.0, limit=5)
        assert not res.converged

    def test_rejects_bad_tol(self):
        with pytest.raises(ValueError):
            adaptive_integrate(math.exp, 0.0, 1.0, tol=0.0)

    def test_cubature(self):
        # the mass outside [-9, 9]^2 is below 1e-17
        res = cubature2d(lambda x, y: math.exp(-0.5 * (x * x + y * y)) * x * x / (2 * math.pi), (-9.0, 9.0), (-9.0, 9.0))
        assert res.value == pytest.approx(1.0, rel=1e-8)


class TestMonteCarlo:
    def test_constant(self):
        assert mc_mean(lambda x: 1.0, lambda rng, n: rng.standard_normal(n), 100, np.random.default_rng(0)) == (1.0, 0.0)

    def test_vector_mean(self):
        mean, se = mc_mean(lambda x: x, lambda rng, n: rng.standard_normal((n, 3)), 10_000, np.random.default_rng(1))
        assert mean.shape == (3,) and np.all(np.abs(mean) < 4 * se)

    def test_minimum_size(self):
        with pytest.raises(ValueError):
            mc_mean(lambda x: x, lambda rng, n: rng.standard_normal(n), 10, np.random.default_rng(0))


class TestTwoSampleTests:
    def test_ks_calibration(self):
        # under the null the p-value is uniform: about 5% of 200 runs reject
        rng = np.random.default_rng(2)
        rejections = sum(ks_test(rng.standard_normal(200), stats.norm.cdf) < 0.05 for _ in range(200))
        assert stats.binom(200, 0.05).cdf(rejections) > 0.001 and stats.binom(200, 0.05).sf(rejections - 1) > 0.001

    def test_ks_power(self):
        assert ks_test(np.random.default_rng(3).standard_t(2, 2000), stats.norm.cdf) < 1e-3

    def test_energy_same_law(self):
        rng = np.random.default_rng(4)
        assert two_sample_energy(rng.standard_normal((300, 2)), rng.standard_normal((300, 2)), rng) > 0.01

    def test_energy_shifted_law(self):
        rng = np.random.default_rng(5)
        assert two_sample_energy(rng.standard_normal((300, 2)), rng.standard_normal((300, 2)) + 0.5, rng) <= 0.01


class TestMardiaMc:
    def test_normal(self):
        rng = np.random.default_rng(6)
        d = 3
        b1, se1, b2, se2 = mardia_mc(rng.standard_normal((100_000, d)), np.zeros(d), np.eye(d), rng=rng)
        assert abs(b1) < 3 * se1
        assert abs(b2 - d * (d + 2)) < 3 * se2


def test_dense_mvn_pdf():
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    y, mu = np.array([0.1, 0.7]), np.array([-0.2, 0.4])
    assert dense_mvn_pdf(y, mu, cov) == pytest.approx(stats.multivariate_normal(mu, cov).pdf(y), rel=1e-13)
