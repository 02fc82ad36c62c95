"""Maximum likelihood for GMN models and EM for the chi-mixture family.

The chi-mixture ``Y | U ~ N_d(xi + gamma U, Sigma)``, ``U ~ chi_nu`` has a
closed-form posterior for ``U`` given ``Y``; its first two moments drive
the E-step.  The M-step maximizes the expected complete-data Gaussian
log-likelihood, which is linear least squares for ``(xi, gamma)`` followed
by a residual covariance for ``Sigma``:

    gamma = (sum u_i y_i - ybar sum u_i) / (sum u2_i - n ubar^2)
    xi    = ybar - gamma ubar
    Sigma = (1/n) sum [e_i e_i' - u_i (e_i gamma' + gamma e_i') + u2_i gamma gamma']

with ``e_i = y_i - xi``, ``u_i = E[U | y_i]`` and ``u2_i = E[U^2 | y_i]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import families as fam
from . import mixing as mx
from .core import GmnDistribution, derive, logpdf_numeric
from .errors import ValidationError
from .specfun import SpdMatrix

__all__ = [
    "FitConfig",
    "FitResult",
    "loglik",
    "em_posterior_moments",
    "em_fit_chimix",
    "profile_nu",
    "parametric_bootstrap",
]


@dataclass(frozen=True)
class FitConfig:
    """EM settings.

    ``tol`` is the relative change of the log-likelihood that stops the
    iteration; ``init`` optionally supplies a starting
    :class:`~gmn.families.ChiMix` record.  Without one, ``init_method``
    selects the start: ``"moments"`` matches the sample mean, covariance and
    marginal third cumulants; ``"skew_direction"`` uses the sample mean and
    covariance with ``gamma`` of norm 0.1 along the sample skewness.
    """

    max_iter: int = 500
    tol: float = 1e-8
    nu: int = 1
    init: Optional[fam.ChiMix] = None
    init_method: str = "moments"

    def __post_init__(self):
        if self.init_method not in ("moments", "skew_direction"):
            raise ValidationError("init_method must be 'moments' or 'skew_direction'")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValidationError("max_iter must be a positive integer")
        if int(self.nu) != self.nu or self.nu < 1:
            raise ValidationError("nu must be a positive integer")


@dataclass(frozen=True)
class FitResult:
    """Output of :func:`em_fit_chimix`."""

    params: fam.ChiMix
    loglik_trace: Tuple[float, ...]
    converged: bool
    iterations: int
    ridge_applied: bool = False

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "loglik_trace": list(self.loglik_trace),
            "converged": self.converged,
            "iterations": self.iterations,
            "ridge_applied": self.ridge_applied,
        }


def loglik(model, data) -> float:
    """Sum of log-densities of the rows of ``data``.

    Family records use their closed form when one exists; otherwise the
    quadrature density of the GMN representation is used.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] < 1:
        raise ValidationError("data must have at least one row")
    if isinstance(model, GmnDistribution):
        return float(np.sum(logpdf_numeric(model, data)))
    try:
        return float(np.sum(fam.closed_logpdf(model, data)))
    except fam.UnsupportedVariantError:
        return float(np.sum(logpdf_numeric(fam.to_gmn(model), data)))


def _posterior_terms(params: fam.ChiMix, z: np.ndarray, nu: int):
    """Per-row ``(a, log M_{nu-1}, E[U|z], E[U^2|z])`` for centred rows ``z``."""
    der = derive(fam.to_gmn(params))
    a = z @ der.eta
    log_m0 = fam.chimix_log_m(nu - 1, a)
    log_m1, log_m2 = fam.chimix_log_m(nu, a), fam.chimix_log_m(nu + 1, a)
    scale = 1.0 / math.sqrt(1.0 + der.alpha_sq)
    return a, log_m0, scale * np.exp(log_m1 - log_m0), scale * scale * np.exp(log_m2 - log_m0)


def em_posterior_moments(params: fam.ChiMix, z, nu: int, k: int):
    """``E[U^k | Y = xi + z]`` under the chi-mixture posterior.

    The posterior density of ``U`` is proportional to
    ``u^(nu-1) phi((1 + alpha^2)^(1/2) u - eta'z)`` on ``u > 0``, so
    ``E[U^k | z] = (1 + alpha^2)^(-k/2) M_{nu-1+k}(eta'z) / M_{nu-1}(eta'z)``.
    """
    if k not in (1, 2):
        raise ValidationError("k must be 1 or 2")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    _, _, u1, u2 = _posterior_terms(params, np.atleast_2d(z), int(nu))
    out = u1 if k == 1 else u2
    return float(out[0]) if single else out


def _skew_direction_start(data, nu):
    n, d = data.shape
    ybar = data.mean(axis=0)
    cov = np.cov(data, rowvar=False, bias=False).reshape(d, d)
    centred = data - ybar
    sd = np.sqrt(np.diag(cov))
    skew = np.mean(centred**3, axis=0) / sd**3
    direction = skew * sd
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 0 else np.eye(d)[0]
    return fam.ChiMix(ybar, cov, 0.1 * direction, nu)


def _moment_start(data, nu):
    # E[(Y - EY)_j^3] = c3(U) gamma_j^3 and cov = Sigma + var(U) gamma gamma'
    n, d = data.shape
    law = mx.ChiNu(nu)
    m1, m2, m3 = law.moment(1), law.moment(2), law.moment(3)
    var_u = m2 - m1 * m1
    c3 = m3 - 3 * m2 * m1 + 2 * m1**3
    ybar = data.mean(axis=0)
    cov = np.cov(data, rowvar=False, bias=False).reshape(d, d)
    k3 = np.mean((data - ybar) ** 3, axis=0)
    gamma = np.cbrt(k3 / c3)
    for _ in range(60):
        try:
            sigma = SpdMatrix(cov - var_u * np.outer(gamma, gamma))
            break
        except ValidationError:
            gamma = 0.8 * gamma
    else:
        return _skew_direction_start(data, nu)
    return fam.ChiMix(ybar - m1 * gamma, sigma, gamma, nu)


def _initial_params(data, nu, method):
    if method == "skew_direction":
        return _skew_direction_start(data, nu)
    return _moment_start(data, nu)


def _m_step(data, u1, u2):
    n, d = data.shape
    ybar = data.mean(axis=0)
    ubar = u1.mean()
    denom = u2.sum() - n * ubar * ubar
    gamma = (u1 @ data - ybar * u1.sum()) / denom
    xi = ybar - gamma * ubar
    e = data - xi
    cross = e.T @ u1  # sum u_i e_i
    sigma = (e.T @ e - np.outer(cross, gamma) - np.outer(gamma, cross) + u2.sum() * np.outer(gamma, gamma)) / n
    return xi, 0.5 * (sigma + sigma.T), gamma


def em_fit_chimix(data, config: FitConfig = FitConfig()) -> FitResult:
    """EM estimate of ``(xi, Sigma, gamma)`` for a chi-mixture with fixed ``nu``.

    Returns a :class:`FitResult`; non-convergence is flagged, not raised.  If
    the updated ``Sigma`` is not positive definite a ridge of
    ``1e-8 * trace`` is added and ``ridge_applied`` is set.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValidationError("data must be an (n, d) array")
    n, d = data.shape
    if n <= d + 1:
        raise ValidationError("need more than d + 1 observations")
    nu = int(config.nu)
    params = config.init if config.init is not None else _initial_params(data, nu, config.init_method)
    if params.nu != nu:
        params = fam.ChiMix(params.xi, params.sigma, params.gamma, nu)
    trace = []
    ridge = False
    converged = False
    iterations = 0
    for it in range(config.max_iter):
        z = data - params.xi
        _, _, u1, u2 = _posterior_terms(params, z, nu)
        ll = float(np.sum(fam.closed_logpdf(params, data)))
        trace.append(ll)
        if it > 0 and abs(trace[-1] - trace[-2]) <= config.tol * abs(trace[-2]):
            converged = True
            break
        xi, sigma, gamma = _m_step(data, u1, u2)
        try:
            sig = SpdMatrix(sigma)
        except ValidationError:
            sig = SpdMatrix(sigma + 1e-8 * np.trace(sigma) * np.eye(d))
            ridge = True
        params = fam.ChiMix(xi, sig, gamma, nu)
        iterations = it + 1
    else:
        trace.append(float(np.sum(fam.closed_logpdf(params, data))))
        converged = abs(trace[-1] - trace[-2]) <= config.tol * abs(trace[-2])
    return FitResult(params, tuple(trace), converged, iterations, ridge)


def profile_nu(data, nus: Sequence[int] = (1, 2, 3, 4), config: FitConfig = FitConfig()):
    """Fit each ``nu`` in ``nus``; return ``(best_result, {nu: result})``."""
    results = {}
    for nu in nus:
        cfg = FitConfig(config.max_iter, config.tol, int(nu), None, config.init_method)
        results[int(nu)] = em_fit_chimix(data, cfg)
    best = max(results.values(), key=lambda r: r.loglik)
    return best, results


def parametric_bootstrap(params: fam.ChiMix, n: int, replicates: int, rng, config: FitConfig = FitConfig()):
    """Standard errors of ``(xi, gamma, vech Sigma)`` by refitting simulated data.

    Each replicate draws ``n`` rows from ``params`` and refits starting at
    ``params``.  Returns a dict of arrays with keys ``xi``, ``gamma`` and
    ``sigma`` (full matrix of standard deviations).
    """
    dist = fam.to_gmn(params)
    xs, gs, ss = [], [], []
    cfg = FitConfig(config.max_iter, config.tol, int(params.nu), params, config.init_method)
    for _ in range(replicates):
        sim = dist.sample(rng, n)
        res = em_fit_chimix(sim, cfg)
        xs.append(res.params.xi)
        gs.append(res.params.gamma)
        ss.append(res.params.sigma.matrix)
    return {
        "xi": np.std(xs, axis=0, ddof=1),
        "gamma": np.std(gs, axis=0, ddof=1),
        "sigma": np.std(ss, axis=0, ddof=1),
    }
