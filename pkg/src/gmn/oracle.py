"""Independent verification tools used by the test-suite.

These deliberately use different algorithms from the main code paths:
QUADPACK adaptive Gauss-Kronrod instead of the double-exponential rules,
dense inversion instead of Cholesky solves, plain Monte Carlo instead of
quadrature.  Library code never imports this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.spatial.distance import cdist

__all__ = [
    "QuadResult",
    "adaptive_integrate",
    "cubature2d",
    "mc_mean",
    "ks_test",
    "two_sample_energy",
    "mardia_mc",
    "dense_mvn_pdf",
]


@dataclass(frozen=True)
class QuadResult:
    """Integral estimate with QUADPACK's error estimate and evaluation count."""

    value: float
    err_estimate: float
    evaluations: int
    converged: bool = True


def adaptive_integrate(f, a, b, tol=1e-10, limit=500, points=None) -> QuadResult:
    """``int_a^b f`` by adaptive Gauss-Kronrod (infinite limits allowed)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    kwargs = dict(epsabs=0.0, epsrel=tol, limit=limit, full_output=1)
    if points is not None and np.isfinite(a) and np.isfinite(b):
        kwargs["points"] = points
    out = integrate.quad(f, a, b, **kwargs)
    value, err, info = out[0], out[1], out[2]
    return QuadResult(float(value), abs(float(err)), int(info["neval"]), len(out) == 3)


def cubature2d(f, x_range, y_range, tol=1e-8) -> QuadResult:
    """``int int f(x, y) dy dx`` by nested adaptive quadrature."""
    evals = [0]

    def g(y, x):
        evals[0] += 1
        return f(x, y)

    opts = {"epsabs": 0.0, "epsrel": tol, "limit": 200}
    value, err = integrate.nquad(g, [y_range, x_range], opts=[opts, opts])
    return QuadResult(float(value), abs(float(err)), evals[0])


def mc_mean(f, sampler, n, rng):
    """Monte Carlo mean of ``f(draws)`` with its standard error."""
    if n < 100:
        raise ValueError("n must be at least 100")
    vals = np.asarray(f(sampler(rng, n)), dtype=float)
    if vals.ndim == 0:
        vals = np.full(n, float(vals))
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(n)
    if vals.ndim == 1:
        return float(mean), float(se)
    return mean, se


def ks_test(sample, cdf) -> float:
    """p-value of the one-sample Kolmogorov-Smirnov test."""
    return float(stats.kstest(np.asarray(sample, float), cdf).pvalue)


def _energy_stat(dxx, dyy, dxy):
    return 2.0 * dxy.mean() - dxx.mean() - dyy.mean()


def two_sample_energy(x, y, rng, n_perm=199, max_n=800) -> float:
    """Permutation p-value of the energy-distance two-sample test.

    At most ``max_n`` rows of each sample are used.
    """
    x = np.atleast_2d(np.asarray(x, float))
    y = np.atleast_2d(np.asarray(y, float))
    if x.shape[0] == 1 and x.shape[1] > 1 and y.shape[1] == 1:
        x = x.T
    if x.shape[0] > max_n:
        x = x[rng.choice(x.shape[0], max_n, replace=False)]
    if y.shape[0] > max_n:
        y = y[rng.choice(y.shape[0], max_n, replace=False)]
    pooled = np.vstack([x, y])
    dist = cdist(pooled, pooled)
    nx = x.shape[0]
    idx = np.arange(pooled.shape[0])

    def stat(perm):
        a, b = perm[:nx], perm[nx:]
        return _energy_stat(dist[np.ix_(a, a)], dist[np.ix_(b, b)], dist[np.ix_(a, b)])

    observed = stat(idx)
    exceed = sum(stat(rng.permutation(idx)) >= observed for _ in range(n_perm))
    return (exceed + 1) / (n_perm + 1)


def mardia_mc(sample, mean, cov, rng=None, pairs=200_000):
    """Monte Carlo estimates of Mardia's measures with standard errors.

    The sample is whitened with the supplied (exact) mean and covariance.
    ``beta1 = E[(W1'W2)^3]`` over independent copies is estimated by the
    U-statistic; ``beta2 = E[(W'W)^2]`` by the sample mean.  The U-statistic
    variance keeps the second-order term ``2 E[(W1'W2)^6] / n^2`` (estimated
    on random pairs) so the standard error stays honest when ``beta1`` is
    near zero.

    Returns ``(beta1, se1, beta2, se2)``.
    """
    y = np.asarray(sample, float)
    n, d = y.shape
    evals, evecs = np.linalg.eigh(np.asarray(cov, float))
    inv_sqrt = evecs @ np.diag(evals**-0.5) @ evecs.T
    w = (y - mean) @ inv_sqrt
    third = np.einsum("ia,ib,ic->abc", w, w, w)
    norms = np.einsum("ij,ij->i", w, w)
    b1 = (np.sum(third * third) - np.sum(norms**3)) / (n * (n - 1.0))
    m_hat = third / n
    h1 = np.einsum("ia,ib,ic,abc->i", w, w, w, m_hat)
    rng = np.random.default_rng(0) if rng is None else rng
    i = rng.integers(0, n, pairs)
    j = (i + rng.integers(1, n, pairs)) % n
    h6 = np.mean(np.einsum("ij,ij->i", w[i], w[j]) ** 6)
    se1 = math.sqrt(4.0 * h1.var(ddof=1) / n + 2.0 * h6 / (n * (n - 1.0)))
    q2 = norms**2
    return float(b1), float(se1), float(q2.mean()), float(q2.std(ddof=1) / math.sqrt(n))


def dense_mvn_pdf(x, mean, cov) -> float:
    """Normal density via an explicit dense inverse and determinant."""
    cov = np.asarray(cov, float)
    diff = np.asarray(x, float) - np.asarray(mean, float)
    d = cov.shape[0]
    inv = np.linalg.inv(cov)
    return float(np.exp(-0.5 * diff @ inv @ diff) / math.sqrt((2 * math.pi) ** d * np.linalg.det(cov)))
