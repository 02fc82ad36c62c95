"""Special functions and small dense linear-algebra kernels.

Everything here is a pure function of its inputs.  The Bessel function of
the third kind is implemented from scratch (Temme series for small
arguments, Steed's continued fraction for large ones, forward recurrence in
the order) so that the generalized inverse Gaussian and generalized
hyperbolic code paths can be checked against scipy as an independent
reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from .errors import DimensionError, ValidationError

__all__ = [
    "SpdMatrix",
    "TruncNormSpec",
    "mahalanobis_sq",
    "sherman_morrison_inv",
    "zeta",
    "log_zeta",
    "truncnorm_moment",
    "truncnorm_moments",
    "bessel_k",
    "log_bessel_k",
    "mvn_logpdf",
    "student_t_cdf",
    "student_t_logcdf",
    "std_normal_cdf",
    "log_std_normal_cdf",
]

LOG_2PI = math.log(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SYM_RTOL = 1e-12


class SpdMatrix:
    """Symmetric strictly positive-definite matrix with a cached Cholesky factor.

    Parameters
    ----------
    entries : array_like, shape (d, d)
        Matrix entries.  The input is copied, symmetrized and frozen.

    Raises
    ------
    ValidationError
        If the matrix is not square, not symmetric to 1e-12 relative, not
        finite, or if the Cholesky factorization fails.
    """

    __slots__ = ("_a", "_chol", "_logdet", "_inv")

    def __init__(self, entries):
        if isinstance(entries, SpdMatrix):
            entries = entries.matrix
        a = np.array(entries, dtype=float, ndmin=2)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("matrix has non-finite entries")
        scale = np.max(np.abs(a)) if a.size else 0.0
        if np.max(np.abs(a - a.T)) > _SYM_RTOL * scale:
            raise ValidationError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("matrix is not positive definite") from exc
        if not np.all(np.diag(chol) > 0):
            raise ValidationError("matrix is not positive definite")
        a.setflags(write=False)
        chol.setflags(write=False)
        self._a = a
        self._chol = chol
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        self._inv = None

    @property
    def matrix(self) -> np.ndarray:
        return self._a

    @property
    def chol(self) -> np.ndarray:
        """Lower-triangular factor ``L`` with ``L @ L.T == matrix``."""
        return self._chol

    @property
    def dim(self) -> int:
        return self._a.shape[0]

    @property
    def logdet(self) -> float:
        return self._logdet

    @property
    def inv(self) -> np.ndarray:
        if self._inv is None:
            li = solve_triangular(self._chol, np.eye(self.dim), lower=True)
            inv = li.T @ li
            inv = 0.5 * (inv + inv.T)
            inv.setflags(write=False)
            self._inv = inv
        return self._inv

    def solve(self, b) -> np.ndarray:
        """Return ``matrix^{-1} b`` via two triangular solves."""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.dim:
            raise DimensionError(f"expected leading dimension {self.dim}, got {b.shape}")
        y = solve_triangular(self._chol, b, lower=True)
        return solve_triangular(self._chol.T, y, lower=False)

    def whiten(self, x) -> np.ndarray:
        """Return ``L^{-1} x`` for rows of ``x`` (shape (n, d) or (d,))."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected trailing dimension {self.dim}, got {x.shape}")
        if x.ndim == 1:
            return solve_triangular(self._chol, x, lower=True)
        return solve_triangular(self._chol, x.T, lower=True).T

    def __eq__(self, other):
        return isinstance(other, SpdMatrix) and np.array_equal(self._a, other._a)

    def __hash__(self):
        return hash(self._a.tobytes())

    def __repr__(self):
        return f"SpdMatrix({self._a.tolist()!r})"


def mahalanobis_sq(x, sigma: SpdMatrix):
    """Squared Mahalanobis norm ``x' Sigma^{-1} x``.

    Accepts a single vector or an ``(n, d)`` array of rows.
    """
    z = sigma.whiten(x)
    return np.sum(z * z, axis=-1) if z.ndim > 1 else float(z @ z)


def sherman_morrison_inv(a_inv, b, d) -> np.ndarray:
    """Inverse of ``A + b d'`` given ``A^{-1}`` (rank-one update).

    Raises
    ------
    ValidationError
        If ``1 + d' A^{-1} b`` is within 1e-14 of zero.
    """
    a_inv = np.asarray(a_inv, dtype=float)
    b = np.asarray(b, dtype=float)
    d = np.asarray(d, dtype=float)
    n = a_inv.shape[0]
    if a_inv.shape != (n, n) or b.shape != (n,) or d.shape != (n,):
        raise DimensionError("non-conformable Sherman-Morrison arguments")
    ab = a_inv @ b
    da = d @ a_inv
    denom = 1.0 + d @ ab
    if abs(denom) < 1e-14:
        raise ValidationError("singular rank-one update")
    return a_inv - np.outer(ab, da) / denom


# ---------------------------------------------------------------------------
# normal and Student t distribution functions


def std_normal_cdf(x):
    return special.ndtr(x)


def log_std_normal_cdf(x):
    return special.log_ndtr(x)


def log_zeta(t):
    """``log(phi(t) / Phi(t))``, accurate for all finite ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    neg = t < 0
    # For t < 0, Phi(t) = erfcx(-t/sqrt2) * exp(-t^2/2) / 2 and the Gaussian
    # factors cancel exactly.
    out[neg] = 0.5 * math.log(2.0 / math.pi) - np.log(special.erfcx(-t[neg] / math.sqrt(2.0)))
    tp = t[~neg]
    out[~neg] = -0.5 * tp * tp - 0.5 * LOG_2PI - special.log_ndtr(tp)
    return out if out.ndim else float(out)


def zeta(t):
    """Inverse Mills ratio ``phi(t) / Phi(t)``."""
    return np.exp(log_zeta(t))


def _betainc_half(x, nu):
    # P(|T| > |x|) / 2 for T ~ t_nu
    return 0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + x * x))


def student_t_cdf(x, nu):
    """Cdf of a standard Student t with ``nu`` degrees of freedom."""
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ValidationError("degrees of freedom must be positive")
    tail = _betainc_half(x, nu)
    out = np.where(x < 0, tail, 1.0 - tail)
    return out if out.ndim else float(out)


def student_t_logcdf(x, nu):
    """Log of :func:`student_t_cdf`, keeping precision in the lower tail."""
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ValidationError("degrees of freedom must be positive")
    tail = _betainc_half(x, nu)
    with np.errstate(divide="ignore"):
        out = np.where(x < 0, np.log(tail), np.log1p(-tail))
    return out if out.ndim else float(out)


def mvn_logpdf(y, mu, sigma: SpdMatrix):
    """Log-density of ``N_d(mu, sigma)`` at a vector or at the rows of ``y``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (sigma.dim,):
        raise DimensionError("mean and covariance dimensions differ")
    q = mahalanobis_sq(y - mu, sigma)
    return -0.5 * (sigma.dim * LOG_2PI + sigma.logdet + q)


# ---------------------------------------------------------------------------
# truncated normal moments


@dataclass(frozen=True)
class TruncNormSpec:
    """Moment request ``E[W^k | W > lower]`` for ``W ~ N(0, 1)``."""

    lower: float
    degree: int

    def __post_init__(self):
        if not math.isfinite(self.lower):
            raise ValidationError("truncation point must be finite")
        if int(self.degree) != self.degree or not 0 <= self.degree <= 12:
            raise ValidationError("degree must be an integer in [0, 12]")


def truncnorm_moments(lower, kmax: int) -> np.ndarray:
    """All moments ``m_0 .. m_kmax`` of ``W | W > lower``.

    Parameters
    ----------
    lower : array_like
        Truncation points ``a``; broadcast over the leading axes.
    kmax : int
        Highest order.

    Returns
    -------
    ndarray, shape ``np.shape(lower) + (kmax + 1,)``
    """
    a = np.asarray(lower, dtype=float)
    m = np.empty(a.shape + (kmax + 1,))
    m[..., 0] = 1.0
    if kmax >= 1:
        z = zeta(-a)
        m[..., 1] = z
        apow = np.ones_like(a)  # a^{k-1}
        for k in range(2, kmax + 1):
            apow = apow * a
            m[..., k] = (k - 1) * m[..., k - 2] + apow * z
    return m


def truncnorm_moment(spec: TruncNormSpec) -> float:
    """``E[W^k | W > a]`` by the two-term recursion in ``k``."""
    return float(truncnorm_moments(spec.lower, spec.degree)[spec.degree])


# ---------------------------------------------------------------------------
# modified Bessel function of the third kind

# Taylor coefficients of 1/Gamma(1 + mu) = sum_j _RGAM[j] mu^j
_RGAM = (
    1.0,
    0.57721566490153286061,
    -0.65587807152025388108,
    -0.042002635034095235529,
    0.1665386113822914895,
    -0.042197734555544336748,
    -0.0096219715278769735621,
    0.0072189432466630995424,
    -0.0011651675918590651121,
    -0.00021524167411495097282,
    0.00012805028238811618615,
    -0.000020134854780788238656,
    -1.2504934821426706573e-6,
    1.1330272319816958824e-6,
    -2.0563384169776071035e-7,
    6.1160951044814158179e-9,
    5.0020076444692229301e-9,
    -1.1812745704870201446e-9,
    1.0434267116911005105e-10,
    7.782263439905071254e-12,
    -3.6968056186422057082e-12,
    5.100370287454475979e-13,
    -2.0583260535665067832e-14,
    -5.3481225394230179824e-15,
    1.2267786282382607902e-15,
    -1.1812593016974587695e-16,
    1.1866922547516003326e-18,
    1.4123806553180317816e-18,
    -2.2987456844353702066e-19,
    1.7144063219273374334e-20,
)
_EPS = 1e-16
_MAXIT = 100000


def _gamma_aux(mu):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2."""
    even = 0.0
    odd = 0.0
    mu2 = mu * mu
    p = 1.0
    for j in range(0, len(_RGAM), 2):
        even += _RGAM[j] * p
        if j + 1 < len(_RGAM):
            odd += _RGAM[j + 1] * p
        p *= mu2
    # 1/Gamma(1 +/- mu) = even +/- mu * odd
    gampl = even + mu * odd
    gammi = even - mu * odd
    return -odd, even, gampl, gammi


def _k_pair_temme(mu, x):
    """Unscaled (K_mu(x), K_{mu+1}(x)) by Temme's series, |mu| <= 1/2, x <= 2."""
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -math.log(x2)
    e = mu * d
    fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
    gam1, gam2, gampl, gammi = _gamma_aux(mu)
    ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
    total = ff
    e = math.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = 1.0
    d = x2 * x2
    total1 = p
    mu2 = mu * mu
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu2)
        c *= d / i
        p /= i - mu
        q /= i + mu
        delta = c * ff
        total += delta
        total1 += c * (p - i * ff)
        if abs(delta) < abs(total) * _EPS:
            break
    return total, total1 * 2.0 / x


def _k_pair_steed_scaled(mu, x):
    """Scaled (e^x K_mu(x), e^x K_{mu+1}(x)) by Steed's CF2, |mu| <= 1/2, x > 2."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu * mu
    q = c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, _MAXIT):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    h = a1 * h
    kmu = math.sqrt(math.pi / (2.0 * x)) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def _log_bessel_k_scalar(order: float, x: float) -> float:
    if not x > 0:
        raise ValidationError(f"Bessel K requires x > 0, got {x}")
    if math.isinf(x):
        return -math.inf
    nu = abs(order)
    nl = int(nu + 0.5)
    mu = nu - nl
    if x <= 2.0:
        kmu, k1 = _k_pair_temme(mu, x)
        shift = 0.0
    else:
        kmu, k1 = _k_pair_steed_scaled(mu, x)
        shift = -x
    # Forward recurrence K_{m+1} = K_{m-1} + (2m/x) K_m carried as ratios so
    # that huge orders cannot overflow.
    log_k = math.log(kmu) + shift
    ratio = k1 / kmu
    for i in range(nl):
        log_k += math.log(ratio)
        ratio = 2.0 * (mu + i + 1) / x + 1.0 / ratio
    return log_k


_log_bessel_k_vec = np.vectorize(_log_bessel_k_scalar, otypes=[float])


def log_bessel_k(order, x):
    """Natural log of the modified Bessel function ``K_order(x)``, ``x > 0``."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(~(x_arr > 0)):
        raise ValidationError("Bessel K requires x > 0")
    out = _log_bessel_k_vec(order, x_arr)
    return out if np.ndim(out) else float(out)


def bessel_k(order, x):
    """Modified Bessel function of the third kind ``K_order(x)``, ``x > 0``."""
    return np.exp(log_bessel_k(order, x))
