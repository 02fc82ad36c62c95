"""The GMN distribution ``Y = xi + R gamma + S X`` with ``X ~ N_d(0, Sigma)``.

``(R, S)`` is produced by a mixing composition from :mod:`gmn.mixing` and is
independent of ``X``.  This module provides sampling, densities, the
distribution and characteristic functions, moments, closure under affine
maps, marginalization and conditioning, quadratic-form diagnostics and the
Mardia skewness and kurtosis measures.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special
from scipy.special import logsumexp

from . import mixing as mx
from .errors import DimensionError, GmnError, ValidationError
from .quadrature import NodeSet, integrate_linear, integrate_log
from .specfun import LOG_2PI, SpdMatrix, mahalanobis_sq, sherman_morrison_inv

__all__ = [
    "Undefined",
    "GmnDistribution",
    "DerivedParams",
    "MardiaIntermediates",
    "MardiaReport",
    "QuadFormReport",
    "DecompositionSamples",
    "CdfEstimate",
    "ConditionalGmn",
    "derive",
    "sample",
    "mean",
    "covariance",
    "pdf_numeric",
    "logpdf_numeric",
    "cdf",
    "char_function",
    "affine",
    "marginal",
    "conditional",
    "quad_form_report",
    "mardia",
    "mardia_from_moments",
    "gmn_from_json",
]

DEFAULT_RTOL = 1e-10
DEFAULT_MC_DRAWS = 100_000
_CDF_CHUNK = 1 << 14


@dataclass(frozen=True)
class Undefined:
    """In-band marker for a quantity whose defining moments do not exist."""

    reason: str

    def __bool__(self):
        return False

    def to_json(self):
        return {"undefined": self.reason}


def _as_vector(x, name, dim=None):
    arr = np.array(x, dtype=float, ndmin=1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a vector")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


class GmnDistribution:
    """``GMN_d(xi, Sigma, gamma, H)``.

    Parameters
    ----------
    xi : array_like, shape (d,)
        Location.
    sigma : array_like or SpdMatrix, shape (d, d)
        Strictly positive-definite dispersion matrix.
    gamma : array_like, shape (d,)
        Direction of the mean-mixing term.
    mixing : mixing composition
        Law of ``(R, S)``.
    """

    __slots__ = ("xi", "sigma", "gamma", "mixing", "__dict__")

    def __init__(self, xi, sigma, gamma, mixing):
        sigma = sigma if isinstance(sigma, SpdMatrix) else SpdMatrix(sigma)
        d = sigma.dim
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "xi", _as_vector(xi, "xi", d))
        object.__setattr__(self, "gamma", _as_vector(gamma, "gamma", d))
        if not isinstance(mixing, mx._Spec):
            raise ValidationError("mixing must be a mixing composition")
        object.__setattr__(self, "mixing", mixing)

    def __setattr__(self, name, value):
        if name in ("xi", "sigma", "gamma", "mixing"):
            raise AttributeError("GmnDistribution is immutable")
        object.__setattr__(self, name, value)

    @property
    def dim(self) -> int:
        return self.sigma.dim

    @cached_property
    def derived(self) -> "DerivedParams":
        return derive(self)

    @cached_property
    def moment_set(self) -> mx.MomentSet:
        return mx.moments(self.mixing, 4)

    def __eq__(self, other):
        return (
            isinstance(other, GmnDistribution)
            and np.array_equal(self.xi, other.xi)
            and np.array_equal(self.gamma, other.gamma)
            and self.sigma == other.sigma
            and self.mixing == other.mixing
        )

    def __hash__(self):
        return hash((self.xi.tobytes(), self.gamma.tobytes(), hash(self.sigma), self.mixing))

    def __repr__(self):
        return (
            f"GmnDistribution(xi={self.xi.tolist()}, sigma={self.sigma.matrix.tolist()}, "
            f"gamma={self.gamma.tolist()}, mixing={self.mixing!r})"
        )

    def to_json(self) -> dict:
        return {
            "kind": "gmn",
            "xi": self.xi.tolist(),
            "sigma": self.sigma.matrix.tolist(),
            "gamma": self.gamma.tolist(),
            "mixing": self.mixing.to_json(),
        }

    # convenience forwarding
    def sample(self, rng, n):
        return sample(self, rng, n)

    def pdf(self, y, rtol=DEFAULT_RTOL):
        return pdf_numeric(self, y, rtol=rtol)

    def logpdf(self, y, rtol=DEFAULT_RTOL):
        return logpdf_numeric(self, y, rtol=rtol)


def gmn_from_json(obj: dict) -> GmnDistribution:
    if obj.get("kind") != "gmn":
        raise ValidationError("expected an object with kind 'gmn'")
    try:
        return GmnDistribution(obj["xi"], obj["sigma"], obj["gamma"], mx.spec_from_json(obj["mixing"]))
    except KeyError as exc:
        raise ValidationError(f"missing field {exc}") from exc


# ---------------------------------------------------------------------------
# derived parameters


@dataclass(frozen=True)
class DerivedParams:
    """Quantities derived from ``(Sigma, gamma)``.

    ``omega = Sigma + gamma gamma'``, ``alpha_sq = gamma' Sigma^{-1} gamma``,
    ``delta_sq = alpha_sq / (1 + alpha_sq)``,
    ``eta = (1 + alpha_sq)^{-1/2} Sigma^{-1} gamma`` and, when the mixing
    law carries a truncation ``tau``, ``tau_bar = (1 + alpha_sq)^{1/2} tau``.
    """

    omega: SpdMatrix
    omega_inv: np.ndarray
    sigma_inv_gamma: np.ndarray
    eta: np.ndarray
    alpha_sq: float
    delta_sq: float
    tau_bar: Optional[float]

    @property
    def alpha(self) -> float:
        return math.sqrt(self.alpha_sq)

    @property
    def delta(self) -> float:
        return math.sqrt(self.delta_sq)


def _truncation_of(spec) -> Optional[float]:
    if isinstance(spec, mx.MeanOnly) and isinstance(spec.u, mx.TruncatedNormalBelow):
        return spec.u.tau
    if isinstance(spec, mx.EstRule):
        return spec.tau
    return None


def derive(dist: GmnDistribution) -> DerivedParams:
    """Compute ``Omega``, ``eta``, ``alpha^2``, ``delta^2`` and ``tau_bar``."""
    g = dist.gamma
    sig_inv_g = dist.sigma.solve(g)
    alpha_sq = float(g @ sig_inv_g)
    omega = SpdMatrix(dist.sigma.matrix + np.outer(g, g))
    # rank-one inverse keeps Omega^{-1} gamma = Sigma^{-1} gamma / (1 + alpha^2) exact
    omega_inv = sherman_morrison_inv(dist.sigma.inv, g, g)
    eta = sig_inv_g / math.sqrt(1.0 + alpha_sq)
    tau = _truncation_of(dist.mixing)
    tau_bar = None if tau is None else math.sqrt(1.0 + alpha_sq) * tau
    for arr in (omega_inv, sig_inv_g, eta):
        arr.setflags(write=False)
    return DerivedParams(omega, omega_inv, sig_inv_g, eta, alpha_sq, alpha_sq / (1.0 + alpha_sq), tau_bar)


# ---------------------------------------------------------------------------
# sampling and moments


def sample(dist: GmnDistribution, rng, n: int) -> np.ndarray:
    """Draw ``n`` rows ``xi + R gamma + S L z`` with ``L L' = Sigma``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    r, s = mx.sample_rs(dist.mixing, rng, n)
    z = rng.standard_normal((n, dist.dim))
    return dist.xi + r[:, None] * dist.gamma + s[:, None] * (z @ dist.sigma.chol.T)


def mean(dist: GmnDistribution):
    """``xi + E[R] gamma``, or :class:`Undefined`.

    The mean exists only when both ``E|R|`` and ``E[S]`` are finite.
    """
    m = dist.moment_set
    for key in ((1, 0), (0, 1)):
        if not m.finite(key):
            return Undefined(f"E[R^{key[0]} S^{key[1]}] is {m.status(*key)}")
    return dist.xi + m[1, 0] * dist.gamma


def covariance(dist: GmnDistribution):
    """``var(R) gamma gamma' + E[S^2] Sigma``, or :class:`Undefined`."""
    m = dist.moment_set
    for key in ((1, 0), (2, 0), (0, 2)):
        if not m.finite(key):
            return Undefined(f"E[R^{key[0]} S^{key[1]}] is {m.status(*key)}")
    var_r = m[2, 0] - m[1, 0] ** 2
    return var_r * np.outer(dist.gamma, dist.gamma) + m[0, 2] * dist.sigma.matrix


# ---------------------------------------------------------------------------
# density


def _normal_log_kernel(dist: GmnDistribution, y):
    """``log phi_d(y; xi + r gamma, s^2 Sigma)`` as a function of (r, s)."""
    x = np.asarray(y, float) - dist.xi
    a = mahalanobis_sq(x, dist.sigma)
    b = float(x @ dist.derived.sigma_inv_gamma)
    al2 = dist.derived.alpha_sq
    d = dist.dim
    c0 = -0.5 * (d * LOG_2PI + dist.sigma.logdet)

    def lk(r, s):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            quad = (a - 2.0 * r * b + r * r * al2) / (s * s)
            return c0 - d * np.log(s) - 0.5 * np.maximum(quad, 0.0)

    return lk


def _rows(dist, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        if y.shape[0] != dist.dim:
            raise DimensionError(f"point has dimension {y.shape[0]}, expected {dist.dim}")
        return y[None, :], True
    if y.ndim != 2 or y.shape[1] != dist.dim:
        raise DimensionError(f"points must have shape (n, {dist.dim})")
    return y, False


def logpdf_numeric(dist: GmnDistribution, y, rtol: float = DEFAULT_RTOL):
    """Log-density by quadrature over the mixing law (atoms summed exactly).

    ``y`` may be one point or an ``(n, d)`` array of points.

    Raises
    ------
    QuadratureError
        If the quadrature does not reach ``rtol``; the exception carries the
        best estimate and the achieved error.
    """
    rows, single = _rows(dist, y)
    out = np.empty(rows.shape[0])
    for i, row in enumerate(rows):
        out[i] = float(integrate_log(dist.mixing, _normal_log_kernel(dist, row), rtol).log_value)
    return float(out[0]) if single else out


def pdf_numeric(dist: GmnDistribution, y, rtol: float = DEFAULT_RTOL):
    """Density ``integral phi_d(y; xi + r gamma, s^2 Sigma) dH(r, s)``."""
    return np.exp(logpdf_numeric(dist, y, rtol))


# ---------------------------------------------------------------------------
# distribution function


@dataclass(frozen=True)
class CdfEstimate:
    """Value of ``P(Y <= y)`` with a standard error (zero for quadrature)."""

    value: float
    se: float
    method: str


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GMN_THREADS", "1")))
    except ValueError:
        return 1


def _genz_rectangle(upper: np.ndarray, chol: np.ndarray, rng) -> np.ndarray:
    """One randomized separation-of-variables draw of ``P(L z <= upper)``.

    ``upper`` has shape (m, d); each row gets an independent uniform vector,
    and the returned product is an unbiased estimate of the probability.
    """
    m, d = upper.shape
    prob = np.ones(m)
    z = np.zeros((m, d))
    for k in range(d):
        shift = z[:, :k] @ chol[k, :k]
        e = special.ndtr((upper[:, k] - shift) / chol[k, k])
        prob *= e
        if k < d - 1:
            w = rng.random(m)
            p = np.clip(w * e, 1e-300, 1.0 - 1e-16)
            z[:, k] = special.ndtri(p)
    return prob


def _cdf_chunk(dist, y, n, seed):
    rng = np.random.default_rng(seed)
    r, s = mx.sample_rs(dist.mixing, rng, n)
    upper = (y - dist.xi - r[:, None] * dist.gamma) / s[:, None]
    return _genz_rectangle(upper, dist.sigma.chol, rng)


def cdf(dist: GmnDistribution, y, rng=None, budget: int = DEFAULT_MC_DRAWS, rtol: float = 1e-10) -> CdfEstimate:
    """``P(Y <= y)`` componentwise.

    For ``d = 1`` the normal cdf is integrated against the mixing law by
    quadrature.  For ``d > 1`` each of ``budget`` draws of ``(R, S)`` is
    paired with a randomized separation-of-variables estimate of the normal
    rectangle probability; the mean and its standard error are returned.
    Work is split into fixed-size chunks with seeds spawned from ``rng`` so
    the result does not depend on the worker count (``GMN_THREADS``).
    """
    y = _as_vector(np.where(np.isposinf(np.asarray(y, float)), 1e308, y), "y", dist.dim)
    if budget < 1000:
        raise ValidationError("budget must be at least 1000")
    if np.all(y >= 1e308):
        return CdfEstimate(1.0, 0.0, "exact")
    if dist.dim == 1:
        sd = math.sqrt(dist.sigma.matrix[0, 0])
        x = y[0] - dist.xi[0]
        g = dist.gamma[0]

        def lk(r, s):
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                return special.log_ndtr((x - r * g) / (s * sd))

        est = integrate_log(dist.mixing, lk, rtol)
        return CdfEstimate(float(np.exp(est.log_value)), 0.0, "quadrature")
    if rng is None:
        raise ValidationError("a random generator is required for d > 1")
    seeds = np.random.SeedSequence(int(rng.integers(0, 2**63))).spawn(-(-budget // _CDF_CHUNK))
    sizes = [min(_CDF_CHUNK, budget - i * _CDF_CHUNK) for i in range(len(seeds))]
    jobs = list(zip(sizes, seeds))
    workers = min(_worker_count(), len(jobs))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _cdf_chunk(dist, y, *job), jobs))
    else:
        parts = [_cdf_chunk(dist, y, *job) for job in jobs]
    vals = np.concatenate(parts)
    return CdfEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)), "monte_carlo")


def char_function(dist: GmnDistribution, t, rtol: float = 1e-12) -> complex:
    """``E[exp(i t'Y)] = exp(i t'xi) E[exp(i R t'gamma - S^2 t'Sigma t / 2)]``."""
    t = _as_vector(t, "t", dist.dim)
    tg = float(t @ dist.gamma)
    tst = float(t @ dist.sigma.matrix @ t)
    if tg == 0.0 and tst == 0.0:
        return complex(np.exp(1j * float(t @ dist.xi)))

    def kernel(r, s):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.exp(1j * r * tg - 0.5 * s * s * tst)

    val, _ = integrate_linear(dist.mixing, kernel, rtol=rtol, atol=1e-15)
    return complex(np.exp(1j * float(t @ dist.xi)) * val)


# ---------------------------------------------------------------------------
# closure operations


def affine(dist: GmnDistribution, b, B) -> GmnDistribution:
    """Law of ``b + B'Y`` for a ``d x q`` matrix ``B`` of full column rank."""
    B = np.array(B, dtype=float, ndmin=2)
    if B.shape[0] != dist.dim:
        raise DimensionError(f"B must have {dist.dim} rows")
    q = B.shape[1]
    if q > dist.dim:
        raise ValidationError("B must have at most d columns")
    b = _as_vector(b, "b", q)
    try:
        sig = SpdMatrix(B.T @ dist.sigma.matrix @ B)
    except ValidationError as exc:
        raise ValidationError("B is rank deficient") from exc
    return GmnDistribution(b + B.T @ dist.xi, sig, B.T @ dist.gamma, dist.mixing)


def _check_indices(indices, d):
    idx = [int(i) for i in np.atleast_1d(indices)]
    if not idx:
        raise ValidationError("index set is empty")
    if len(set(idx)) != len(idx):
        raise ValidationError("index set has duplicates")
    if any(i < 0 or i >= d for i in idx):
        raise ValidationError(f"indices must lie in 0..{d - 1}")
    return idx


def marginal(dist: GmnDistribution, indices: Sequence[int]) -> GmnDistribution:
    """Marginal law of the components listed in ``indices`` (0-based)."""
    idx = _check_indices(indices, dist.dim)
    sub = dist.sigma.matrix[np.ix_(idx, idx)]
    return GmnDistribution(dist.xi[idx], sub, dist.gamma[idx], dist.mixing)


@dataclass(frozen=True)
class StudentTParams:
    """Multivariate t with location, scale matrix and degrees of freedom."""

    loc: np.ndarray
    scale: SpdMatrix
    df: float

    def logpdf(self, y):
        y = np.asarray(y, float)
        d = self.scale.dim
        q = mahalanobis_sq(y - self.loc, self.scale)
        nu = self.df
        return (
            special.gammaln(0.5 * (nu + d))
            - special.gammaln(0.5 * nu)
            - 0.5 * d * math.log(nu * math.pi)
            - 0.5 * self.scale.logdet
            - 0.5 * (nu + d) * np.log1p(q / nu)
        )

    def sample(self, rng, n):
        w = self.df / rng.chisquare(self.df, n)
        z = rng.standard_normal((n, self.scale.dim))
        return self.loc + np.sqrt(w)[:, None] * (z @ self.scale.chol.T)


@dataclass(frozen=True)
class ConditionalGmn:
    """Law of ``Y_1`` given ``Y_2 = y_2``.

    Conditionally on ``(R, S)`` the law is ``N(xi + R gamma, S^2 sigma)``;
    the mixing measure is the posterior of ``(R, S)`` given ``y_2``, carried
    as normalized node weights.  ``student_t`` holds the exact conditional
    when the model is a multivariate t.
    """

    indices1: tuple
    indices2: tuple
    y2: np.ndarray
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray
    nodes: NodeSet
    log_marginal: float
    student_t: Optional[StudentTParams] = None

    @property
    def dim(self) -> int:
        return self.sigma.dim

    def logpdf_nodes(self, y1):
        """Log-density from the reweighted node measure."""
        y1 = np.asarray(y1, float)
        x = y1 - self.xi
        a = mahalanobis_sq(x, self.sigma)
        sig_inv_g = self.sigma.solve(self.gamma)
        b = float(x @ sig_inv_g)
        al2 = float(self.gamma @ sig_inv_g)
        r, s = self.nodes.r, self.nodes.s
        d = self.dim
        lk = -0.5 * (d * LOG_2PI + self.sigma.logdet) - d * np.log(s) - 0.5 * (a - 2 * r * b + r * r * al2) / (s * s)
        return float(logsumexp(self.nodes.logw + lk))

    def logpdf(self, y1):
        if self.student_t is not None:
            return float(self.student_t.logpdf(y1))
        return self.logpdf_nodes(y1)

    def pdf(self, y1):
        return math.exp(self.logpdf(y1))

    def mean(self):
        if self.student_t is not None:
            if self.student_t.df <= 1:
                return Undefined("conditional t has df <= 1")
            return self.student_t.loc.copy()
        return self.xi + float(np.sum(self.nodes.weights * self.nodes.r)) * self.gamma

    def sample(self, rng, n):
        """Exact draws for the t case, node resampling otherwise."""
        if self.student_t is not None:
            return self.student_t.sample(rng, n)
        w = self.nodes.weights
        idx = rng.choice(w.size, size=n, p=w / w.sum())
        z = rng.standard_normal((n, self.dim))
        return self.xi + self.nodes.r[idx, None] * self.gamma + self.nodes.s[idx, None] * (z @ self.sigma.chol.T)

    def to_json(self) -> dict:
        out = {
            "indices1": list(self.indices1),
            "indices2": list(self.indices2),
            "y2": self.y2.tolist(),
            "xi": self.xi.tolist(),
            "sigma": self.sigma.matrix.tolist(),
            "gamma": self.gamma.tolist(),
            "log_marginal": self.log_marginal,
            "nodes": {"r": self.nodes.r.tolist(), "s": self.nodes.s.tolist(), "weight": self.nodes.weights.tolist()},
        }
        if self.student_t is not None:
            out["student_t"] = {
                "loc": self.student_t.loc.tolist(),
                "scale": self.student_t.scale.matrix.tolist(),
                "df": self.student_t.df,
            }
        return out


def conditional(dist: GmnDistribution, indices2: Sequence[int], y2, rtol: float = DEFAULT_RTOL) -> ConditionalGmn:
    """Conditional law of the remaining components given ``Y[indices2] = y2``."""
    idx2 = _check_indices(indices2, dist.dim)
    if len(idx2) == dist.dim:
        raise ValidationError("nothing left to condition: indices2 covers every component")
    idx1 = [i for i in range(dist.dim) if i not in idx2]
    y2 = _as_vector(y2, "y2", len(idx2))
    S = dist.sigma.matrix
    s22 = SpdMatrix(S[np.ix_(idx2, idx2)])
    s12 = S[np.ix_(idx1, idx2)]
    reg = s22.solve(s12.T).T  # Sigma_12 Sigma_22^{-1}
    s11_2 = SpdMatrix(S[np.ix_(idx1, idx1)] - reg @ s12.T)
    xi1 = dist.xi[idx1] + reg @ (y2 - dist.xi[idx2])
    g1 = dist.gamma[idx1] - reg @ dist.gamma[idx2]

    marg = marginal(dist, idx2)
    lk = _normal_log_kernel(marg, y2)
    est = integrate_log(dist.mixing, lk, rtol, extra_levels=1)
    nodes = est.nodes
    post = nodes.logw + lk(nodes.r, nodes.s)
    post = np.where(np.isnan(post), -np.inf, post)
    log_f2 = float(logsumexp(post))
    keep = post > log_f2 - 80.0
    post_nodes = NodeSet(nodes.r[keep], nodes.s[keep], post[keep] - log_f2)

    t_params = None
    spec = dist.mixing
    if isinstance(spec, mx.ScaleOnly) and isinstance(spec.v, mx.InverseChiSqScaled):
        nu = spec.v.nu
        d2 = len(idx2)
        q2 = mahalanobis_sq(y2 - dist.xi[idx2], s22)
        t_params = StudentTParams(xi1, SpdMatrix((nu + q2) / (nu + d2) * s11_2.matrix), nu + d2)
    return ConditionalGmn(tuple(idx1), tuple(idx2), y2, xi1, s11_2, g1, post_nodes, float(est.log_value), t_params)


# ---------------------------------------------------------------------------
# quadratic forms


@dataclass(frozen=True)
class DecompositionSamples:
    """Draws of ``Q0 = (Y - xi)' Omega^{-1} (Y - xi)`` and its two parts."""

    u: np.ndarray
    q0: np.ndarray
    w_sq: np.ndarray
    v0_sq: np.ndarray


@dataclass(frozen=True)
class QuadFormReport:
    """Expected quadratic forms and optional decomposition draws."""

    e_mdist: Union[float, Undefined]
    e_q: Union[float, Undefined]
    gamma_free: bool
    decomposition_samples: Optional[DecompositionSamples] = None

    def to_json(self) -> dict:
        def enc(v):
            return v.to_json() if isinstance(v, Undefined) else v

        out = {"e_mdist": enc(self.e_mdist), "e_q": enc(self.e_q), "gamma_free": self.gamma_free}
        if self.decomposition_samples is not None:
            ds = self.decomposition_samples
            out["decomposition_samples"] = {"w_sq": ds.w_sq.tolist(), "v0_sq": ds.v0_sq.tolist()}
        return out


def sample_q0_decomposition(dist: GmnDistribution, rng, n: int) -> DecompositionSamples:
    """Sample ``Q0`` directly and as ``W^2 + V0^2`` on the same draws.

    Only defined for mean mixtures.  With ``Z = L^{-1} X0`` standard normal
    and ``T0`` its coordinate along ``L^{-1} gamma``,
    ``W = delta U + (1 - delta^2)^{1/2} T0`` and ``V0^2 = |Z|^2 - T0^2``.
    """
    if not isinstance(dist.mixing, mx.MeanOnly):
        raise ValidationError("the decomposition applies to mean mixtures only")
    d = dist.dim
    u = dist.mixing.u.sample(rng, n)
    z = rng.standard_normal((n, d))
    x0 = z @ dist.sigma.chol.T
    y0 = u[:, None] * dist.gamma + x0
    der = dist.derived
    q0 = np.einsum("ij,jk,ik->i", y0, der.omega_inv, y0)
    g_white = dist.sigma.whiten(dist.gamma)
    alpha = math.sqrt(der.alpha_sq)
    direction = g_white / alpha if alpha > 0 else np.eye(d)[0]
    t0 = z @ direction
    w = der.delta * u + math.sqrt(1.0 - der.delta_sq) * t0
    v0_sq = np.sum(z * z, axis=1) - t0 * t0
    return DecompositionSamples(u, q0, w * w, v0_sq)


def quad_form_report(dist: GmnDistribution, rng=None, n: Optional[int] = None) -> QuadFormReport:
    """Expectations of ``|Y - xi|^2_Sigma`` and ``|Y - xi|^2_Omega``.

    ``E|Y0|^2_Sigma = d mu02 + alpha^2 mu20`` and
    ``E Q = d mu02 + delta^2 (mu20 - mu02)``.  When ``rng`` is given and the
    model is a mean mixture, ``n`` draws of the decomposition are attached.
    """
    m = dist.moment_set
    d = dist.dim
    der = dist.derived
    if m.finite((2, 0), (0, 2)):
        e_mdist = d * m[0, 2] + der.alpha_sq * m[2, 0]
        e_q = d * m[0, 2] + der.delta_sq * (m[2, 0] - m[0, 2])
        gamma_free = math.isclose(m[2, 0], m[0, 2], rel_tol=1e-12, abs_tol=0.0)
    else:
        bad = [k for k in ((2, 0), (0, 2)) if not m.finite(k)]
        reason = ", ".join(f"E[R^{h} S^{k}] is {m.status(h, k)}" for h, k in bad)
        e_mdist = e_q = Undefined(reason)
        gamma_free = False
    samples = None
    if rng is not None and isinstance(dist.mixing, mx.MeanOnly):
        samples = sample_q0_decomposition(dist, rng, n or DEFAULT_MC_DRAWS)
    return QuadFormReport(e_mdist, e_q, gamma_free, samples)


# ---------------------------------------------------------------------------
# Mardia measures


@dataclass(frozen=True)
class MardiaIntermediates:
    """Ingredients of the Mardia measures.

    ``Z0 = alpha R0 + T0`` with ``R0 = R - E R``; the ``*_std`` fields refer
    to ``Z0`` scaled to unit variance.
    """

    rho: float
    rho_bar: float
    e_s2z0: float
    e_s2z0_sq: float
    e_z0_cubed: float
    e_z0_fourth: float
    var_z0: float
    beta1_z0: float
    beta2_z0: float
    e_s2z0_std: float
    e_s2z0_sq_std: float
    beta1_remark: float
    beta2_remark: float

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class MardiaReport:
    """Multivariate skewness ``beta1`` and kurtosis ``beta2``."""

    beta1: Union[float, Undefined]
    beta2: Union[float, Undefined]
    intermediates: Optional[MardiaIntermediates]
    mean_mixture: Optional[tuple] = None  # (beta1, beta2) from the mean-mixture path
    path: str = "general"

    def to_json(self) -> dict:
        def enc(v):
            return v.to_json() if isinstance(v, Undefined) else v

        out = {"beta1": enc(self.beta1), "beta2": enc(self.beta2), "path": self.path}
        if self.intermediates is not None:
            out["intermediates"] = self.intermediates.to_json()
        if self.mean_mixture is not None:
            out["mean_mixture"] = {"beta1": self.mean_mixture[0], "beta2": enc(self.mean_mixture[1])}
        return out


def mardia_mean_mixture(d: int, alpha_sq: float, u_moments) -> tuple:
    """Mardia measures of a mean mixture from the moments of ``U``.

    With ``kappa = alpha^2 var(U)``:
    ``beta1 = alpha^6 c3^2 / (1 + kappa)^3`` and
    ``beta2 = d(d+2) + alpha^4 (c4 - 3 var(U)^2) / (1 + kappa)^2`` where
    ``c3, c4`` are the central moments of ``U``.
    """
    m1, m2, m3, m4 = u_moments
    var = m2 - m1 * m1
    c3 = m3 - 3 * m2 * m1 + 2 * m1**3
    kappa = alpha_sq * var
    beta1 = alpha_sq**3 * c3 * c3 / (1.0 + kappa) ** 3
    if not math.isfinite(m4):
        return beta1, Undefined(f"E[U^4] is {'infinite' if math.isinf(m4) else 'undefined'}")
    c4 = m4 - 4 * m3 * m1 + 6 * m2 * m1 * m1 - 3 * m1**4
    beta2 = d * (d + 2) + alpha_sq**2 * (c4 - 3.0 * var * var) / (1.0 + kappa) ** 2
    return beta1, beta2


def mardia_from_moments(d: int, alpha_sq: float, mu) -> MardiaReport:
    """General-path Mardia measures from ``mu[(h, k)] = E[R^h S^k]``.

    ``mu`` may be a :class:`MomentSet` or any mapping with the keys
    ``10, 20, 30, 40, 02, 04, 12, 22``.
    """
    get = (lambda h, k: mu[(h, k)]) if not isinstance(mu, mx.MomentSet) else (lambda h, k: mu[h, k])
    alpha = math.sqrt(alpha_sq)
    m02 = get(0, 2)
    if not (math.isfinite(m02) and m02 > 0):
        return MardiaReport(Undefined("E[S^2] is not finite"), Undefined("E[S^2] is not finite"), None)
    if alpha == 0.0:
        m10 = m20 = m30 = m40 = m12 = m22 = 0.0
    else:
        m10, m20, m30, m12 = get(1, 0), get(2, 0), get(3, 0), get(1, 2)
        m40, m22 = get(4, 0), get(2, 2)
    m04 = get(0, 4)
    third_ok = all(math.isfinite(v) for v in (m10, m20, m30, m12))
    fourth_ok = third_ok and all(math.isfinite(v) for v in (m40, m22, m04))
    if not third_ok:
        why = Undefined("third-order mixing moments are not finite")
        return MardiaReport(why, why, None)

    mb20 = m20 - m10 * m10
    rho = mb20 / m02
    rho_bar = alpha_sq * mb20 / (m02 + alpha_sq * mb20)
    var_z0 = alpha_sq * mb20 + m02
    e_s2z0 = alpha * (m12 - m10 * m02)
    e_z0_3 = alpha**3 * (m30 - 3 * m20 * m10 + 2 * m10**3) + 3 * alpha * (m12 - m10 * m02)
    beta1 = (3 * (d - 1) * (1 - rho_bar) * e_s2z0**2 + (1 - rho_bar) ** 3 * e_z0_3**2) / m02**3
    e_s2z0_std = e_s2z0 / math.sqrt(var_z0)
    beta1_z0 = e_z0_3**2 / var_z0**3
    beta1_remark = 3 * (d - 1) * e_s2z0_std**2 / m02**2 + beta1_z0

    if fourth_ok:
        e_s2z0_2 = alpha_sq * (m22 - 2 * m12 * m10 + m10 * m10 * m02) + m04
        e_z0_4 = (
            alpha_sq**2 * (m40 - 4 * m30 * m10 + 6 * m20 * m10 * m10 - 3 * m10**4)
            + 6 * alpha_sq * (m22 - 2 * m12 * m10 + m10 * m10 * m02)
            + 3 * m04
        )
        beta2 = ((d + 1) * (d - 1) * m04 + 2 * (d - 1) * (1 - rho_bar) * e_s2z0_2 + (1 - rho_bar) ** 2 * e_z0_4) / m02**2
        e_s2z0_2_std = e_s2z0_2 / var_z0
        beta2_z0 = e_z0_4 / var_z0**2
        beta2_remark = (d + 1) * (d - 1) * m04 / m02**2 + 2 * (d - 1) * e_s2z0_2_std / m02 + beta2_z0
    else:
        beta2 = Undefined("fourth-order mixing moments are not finite")
        e_s2z0_2 = e_z0_4 = e_s2z0_2_std = beta2_z0 = beta2_remark = math.nan
    inter = MardiaIntermediates(
        rho, rho_bar, e_s2z0, e_s2z0_2, e_z0_3, e_z0_4, var_z0, beta1_z0, beta2_z0,
        e_s2z0_std, e_s2z0_2_std, beta1_remark, beta2_remark,
    )
    return MardiaReport(beta1, beta2, inter)


def mardia(dist: GmnDistribution) -> MardiaReport:
    """Mardia skewness and kurtosis of ``dist``.

    The general moment path is always used for the returned values.  For
    mean mixtures the specialized expressions are also evaluated and the
    two are required to agree.
    """
    d = dist.dim
    al2 = dist.derived.alpha_sq
    report = mardia_from_moments(d, al2, dist.moment_set)
    if not isinstance(dist.mixing, mx.MeanOnly) or isinstance(report.beta1, Undefined):
        return report
    m = dist.moment_set
    special_vals = mardia_mean_mixture(d, al2, (m[1, 0], m[2, 0], m[3, 0], m[4, 0]))
    for general, spec_val in zip((report.beta1, report.beta2), special_vals):
        if isinstance(general, Undefined) or isinstance(spec_val, Undefined):
            if isinstance(general, Undefined) != isinstance(spec_val, Undefined):
                raise GmnError("Mardia paths disagree on existence")
            continue
        if abs(general - spec_val) > 1e-9 * max(1.0, abs(general)):
            raise GmnError(f"Mardia paths disagree: {general!r} vs {spec_val!r}")
    return MardiaReport(report.beta1, report.beta2, report.intermediates, special_vals, "general+mean_mixture")
