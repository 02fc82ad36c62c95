"""Named families: closed-form densities paired with their GMN representation.

Each parameter record converts to a :class:`~gmn.core.GmnDistribution` via
:func:`to_gmn` so that the closed forms in :func:`closed_pdf` can be checked
against the generic quadrature density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import ClassVar, Dict

import numpy as np
from scipy import special

from . import mixing as mx
from .core import GmnDistribution, MardiaReport, derive, mardia_from_moments
from .errors import UnsupportedVariantError, ValidationError
from .specfun import (
    LOG_2PI,
    SpdMatrix,
    log_bessel_k,
    log_std_normal_cdf,
    log_zeta,
    mahalanobis_sq,
    mvn_logpdf,
    student_t_logcdf,
    truncnorm_moments,
)

__all__ = [
    "Sn",
    "Esn",
    "Mmmne",
    "RayleighMix",
    "ChiMix",
    "StudentT",
    "Gh",
    "Sichel",
    "SkewT",
    "Est",
    "SymGh",
    "to_gmn",
    "closed_logpdf",
    "closed_pdf",
    "family_mardia",
    "family_from_json",
    "gh_marginal",
    "family_marginal",
    "chimix_log_m",
]

_FAMILIES: Dict[str, type] = {}
_DET_TOL = 1e-10


class _Family:
    """Shared validation and serialization for family parameter records."""

    family: ClassVar[str] = ""
    has_gamma: ClassVar[bool] = True
    unit_det: ClassVar[bool] = False

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.family:
            _FAMILIES[cls.family] = cls

    def __post_init__(self):
        sigma = self.sigma if isinstance(self.sigma, SpdMatrix) else SpdMatrix(self.sigma)
        object.__setattr__(self, "sigma", sigma)
        d = sigma.dim
        xi = np.array(self.xi, dtype=float, ndmin=1)
        if xi.shape != (d,):
            raise ValidationError(f"xi must have length {d}")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        if self.has_gamma:
            g = np.array(self.gamma, dtype=float, ndmin=1)
            if g.shape != (d,):
                raise ValidationError(f"gamma must have length {d}")
            g.setflags(write=False)
            object.__setattr__(self, "gamma", g)
        if self.unit_det and abs(sigma.logdet) > _DET_TOL:
            raise ValidationError("this family requires det(Sigma) = 1")
        self._validate()

    def _validate(self):
        pass

    @property
    def dim(self) -> int:
        return self.sigma.dim

    @property
    def gamma_vec(self) -> np.ndarray:
        return self.gamma if self.has_gamma else np.zeros(self.dim)

    def __eq__(self, other):
        if type(self) is not type(other):
            return False
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, SpdMatrix):
                if a != b:
                    return False
            elif isinstance(a, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None

    def to_json(self) -> dict:
        out = {"family": self.family}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, SpdMatrix):
                v = v.matrix.tolist()
            elif isinstance(v, np.ndarray):
                v = v.tolist()
            out[f.name] = v
        return out


def family_from_json(obj: dict):
    """Rebuild a family record from JSON (``"family"`` selects the variant)."""
    try:
        cls = _FAMILIES[obj["family"]]
    except KeyError as exc:
        raise ValidationError(f"unknown family {obj.get('family')!r}") from exc
    kwargs = {k: v for k, v in obj.items() if k != "family"}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad fields for family {obj['family']!r}: {exc}") from exc


def _check_pos(name, v):
    if not (math.isfinite(v) and v > 0):
        raise ValidationError(f"{name} must be positive and finite")


@dataclass(frozen=True, eq=False)
class Sn(_Family):
    """Skew-normal: mean mixture with half-normal ``U``."""

    family: ClassVar[str] = "sn"
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray


@dataclass(frozen=True, eq=False)
class Esn(_Family):
    """Extended skew-normal: ``U`` normal truncated below ``-tau``."""

    family: ClassVar[str] = "esn"
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray
    tau: float = 0.0

    def _validate(self):
        if not math.isfinite(self.tau):
            raise ValidationError("tau must be finite")


@dataclass(frozen=True, eq=False)
class Mmmne(_Family):
    """Mean mixture with a standard exponential ``U``."""

    family: ClassVar[str] = "mmmne"
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray


@dataclass(frozen=True, eq=False)
class RayleighMix(_Family):
    """Mean mixture with a standard Rayleigh ``U``."""

    family: ClassVar[str] = "rayleigh_mix"
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray


@dataclass(frozen=True, eq=False)
class ChiMix(_Family):
    """Mean mixture with ``U ~ chi_nu``; the closed form needs integer ``nu``."""

    family: ClassVar[str] = "chi_mix"
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray
    nu: float = 1

    def _validate(self):
        _check_pos("nu", self.nu)


@dataclass(frozen=True, eq=False)
class StudentT(_Family):
    """Multivariate Student t: scale mixture with ``V ~ nu / chi^2_nu``."""

    family: ClassVar[str] = "student_t"
    has_gamma: ClassVar[bool] = False
    xi: np.ndarray
    sigma: SpdMatrix
    nu: float = 5.0

    def _validate(self):
        _check_pos("nu", self.nu)


def _check_gig(lam, chi, psi):
    mx.Gig(lam, chi, psi)


@dataclass(frozen=True, eq=False)
class Gh(_Family):
    """Generalized hyperbolic: variance-mean mixture with GIG ``V``; det(Sigma) = 1."""

    family: ClassVar[str] = "gh"
    unit_det: ClassVar[bool] = True
    lam: float
    chi: float
    psi: float
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray

    def _validate(self):
        _check_pos("chi", self.chi)
        _check_pos("psi", self.psi)
        _check_gig(self.lam, self.chi, self.psi)


@dataclass(frozen=True, eq=False)
class Sichel(_Family):
    """GH boundary ``chi = 0`` with ``lam > 0``: Gamma variance-mean mixture."""

    family: ClassVar[str] = "sichel"
    unit_det: ClassVar[bool] = True
    lam: float
    psi: float
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray

    def _validate(self):
        _check_pos("lam", self.lam)
        _check_pos("psi", self.psi)


@dataclass(frozen=True, eq=False)
class SkewT(_Family):
    """Skew-t: scale mixture of skew-normals with ``V ~ nu / chi^2_nu``."""

    family: ClassVar[str] = "skew_t"
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray
    nu: float = 5.0

    def _validate(self):
        _check_pos("nu", self.nu)


@dataclass(frozen=True, eq=False)
class Est(_Family):
    """Extended skew-t."""

    family: ClassVar[str] = "est"
    xi: np.ndarray
    sigma: SpdMatrix
    gamma: np.ndarray
    nu: float = 5.0
    tau: float = 0.0

    def _validate(self):
        _check_pos("nu", self.nu)
        if not math.isfinite(self.tau):
            raise ValidationError("tau must be finite")


@dataclass(frozen=True, eq=False)
class SymGh(_Family):
    """Symmetric GH: scale mixture with GIG ``V``; det(Sigma) = 1."""

    family: ClassVar[str] = "sym_gh"
    has_gamma: ClassVar[bool] = False
    unit_det: ClassVar[bool] = True
    lam: float
    chi: float
    psi: float
    xi: np.ndarray
    sigma: SpdMatrix

    def _validate(self):
        _check_pos("chi", self.chi)
        _check_pos("psi", self.psi)
        _check_gig(self.lam, self.chi, self.psi)


# ---------------------------------------------------------------------------
# representations


def to_gmn(params) -> GmnDistribution:
    """The stochastic representation of a family as a GMN model."""
    if not isinstance(params, _Family):
        raise UnsupportedVariantError(f"not a family record: {type(params).__name__}")
    xi, sigma = params.xi, params.sigma
    g = params.gamma_vec
    if isinstance(params, Sn):
        spec = mx.MeanOnly(mx.HalfNormal())
    elif isinstance(params, Esn):
        spec = mx.MeanOnly(mx.TruncatedNormalBelow(params.tau))
    elif isinstance(params, Mmmne):
        spec = mx.MeanOnly(mx.Exponential())
    elif isinstance(params, RayleighMix):
        spec = mx.MeanOnly(mx.Rayleigh())
    elif isinstance(params, ChiMix):
        spec = mx.MeanOnly(mx.ChiNu(params.nu))
    elif isinstance(params, StudentT):
        spec = mx.ScaleOnly(mx.InverseChiSqScaled(params.nu))
    elif isinstance(params, Gh):
        spec = mx.VarianceMean(mx.Gig(params.lam, params.chi, params.psi))
    elif isinstance(params, Sichel):
        spec = mx.VarianceMean(mx.Gig(params.lam, 0.0, params.psi))
    elif isinstance(params, SkewT):
        spec = mx.SnScaleMix(mx.HalfNormal(), mx.InverseChiSqScaled(params.nu))
    elif isinstance(params, Est):
        spec = mx.EstRule(params.nu, params.tau)
    elif isinstance(params, SymGh):
        spec = mx.ScaleOnly(mx.Gig(params.lam, params.chi, params.psi))
    else:
        raise UnsupportedVariantError(f"not a family record: {type(params).__name__}")
    return GmnDistribution(xi, sigma, g, spec)


# ---------------------------------------------------------------------------
# closed-form densities


_M_SWITCH = -1.0  # below this the binomial expansion starts to cancel
_M_EXTRA_TERMS = 200


def _log_m_ratio_tail(n: int, b: np.ndarray) -> np.ndarray:
    """``log M_n(-b)`` for ``b > 0`` by backward recurrence on moment ratios.

    With ``I_k = int_0^inf x^k exp(-x^2/2 - b x) dx`` the ratios
    ``r_k = I_k / I_(k-1)`` satisfy ``r_k = k / (b + r_(k+1))``, which is
    stable when run downwards; ``M_n = r_1 ... r_n``.
    """
    top = n + _M_EXTRA_TERMS
    r = 0.5 * (np.sqrt(b * b + 4.0 * (top + 1)) - b)
    out = np.zeros_like(b)
    for k in range(top, 0, -1):
        r = k / (b + r)
        if k <= n:
            out = out + np.log(r)
    return out


def chimix_log_m(n: int, a):
    """``log M_n(a)`` where ``M_n(a) = E[(W + a)^n | W + a > 0]``, ``W ~ N(0, 1)``.

    For ``a >= -1`` the binomial expansion in truncated-normal moments with
    lower limit ``-a`` has no harmful cancellation; further left a backward
    ratio recurrence is used.
    """
    a = np.asarray(a, dtype=float)
    scalar = a.ndim == 0
    a = np.atleast_1d(a)
    out = np.empty_like(a)
    left = a < _M_SWITCH
    if np.any(~left):
        ar = a[~left]
        m = truncnorm_moments(-ar, n)
        total = np.zeros_like(ar)
        for k in range(n + 1):
            total = total + math.comb(n, k) * m[..., k] * ar ** (n - k)
        out[~left] = np.log(total)
    if np.any(left):
        out[left] = _log_m_ratio_tail(int(n), -a[left])
    return float(out[0]) if scalar else out


def _log_t_density(x, sigma: SpdMatrix, nu):
    d = sigma.dim
    q = mahalanobis_sq(x, sigma)
    return (
        special.gammaln(0.5 * (nu + d))
        - special.gammaln(0.5 * nu)
        - 0.5 * d * math.log(nu * math.pi)
        - 0.5 * sigma.logdet
        - 0.5 * (nu + d) * np.log1p(q / nu)
    ), q


def _log_phi_plus_a_cdf(a):
    """``log(phi(a) + a Phi(a))`` stably: ``log Phi(a) + log(zeta(a) + a)``."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    small = a < -30.0
    # asymptotically phi(a) + a Phi(a) ~ phi(a) / a^2 (1 - 3/a^2 + 15/a^4)
    aa = a[small]
    out[small] = -0.5 * aa * aa - 0.5 * LOG_2PI - 2.0 * np.log(-aa) + np.log1p(-3.0 / aa**2 + 15.0 / aa**4)
    ab = a[~small]
    out[~small] = log_std_normal_cdf(ab) + np.log(np.exp(log_zeta(ab)) + ab)
    return out


def _gh_log_density(x, sigma: SpdMatrix, gamma, lam, chi, psi):
    d = sigma.dim
    q = mahalanobis_sq(x, sigma)
    sig_inv_g = sigma.solve(gamma)
    c = psi + float(gamma @ sig_inv_g)
    b = x @ sig_inv_g
    z = np.sqrt(c * (chi + q))
    nu = lam - 0.5 * d
    # log[K_nu(z) z^nu]; at z = 0 (only reachable when chi = 0) use the limit
    # Gamma(nu) 2^(nu - 1) for nu > 0, a pole otherwise
    z_arr = np.atleast_1d(z)
    at_zero = z_arr == 0.0
    kz = np.empty_like(z_arr)
    kz[~at_zero] = log_bessel_k(nu, z_arr[~at_zero]) + nu * np.log(z_arr[~at_zero])
    kz[at_zero] = special.gammaln(nu) + (nu - 1.0) * math.log(2.0) if nu > 0 else np.inf
    kz = kz.reshape(np.shape(z)) if np.ndim(z) else float(kz[0])
    if chi == 0.0:
        lead = math.log(2.0) + lam * math.log(0.5 * psi) - special.gammaln(lam)
    else:
        lead = 0.5 * lam * math.log(psi / chi) - log_bessel_k(lam, math.sqrt(chi * psi))
    return (
        lead
        + (0.5 * d - lam) * math.log(c)
        - 0.5 * d * LOG_2PI
        - 0.5 * sigma.logdet
        + kz
        + b
    )


def closed_logpdf(params, y):
    """Log of the family's closed-form density at a point or rows of points."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    rows = y[None, :] if single else y
    if rows.shape[1] != params.dim:
        raise ValidationError(f"points must have dimension {params.dim}")
    x = rows - params.xi
    out = _closed_logpdf_rows(params, x)
    return float(out[0]) if single else out


def _closed_logpdf_rows(params, x):
    d = params.dim
    if isinstance(params, StudentT):
        return _log_t_density(x, params.sigma, params.nu)[0]
    if isinstance(params, SymGh):
        return _gh_log_density(x, params.sigma, np.zeros(d), params.lam, params.chi, params.psi)
    if isinstance(params, Gh):
        return _gh_log_density(x, params.sigma, params.gamma, params.lam, params.chi, params.psi)
    if isinstance(params, Sichel):
        return _gh_log_density(x, params.sigma, params.gamma, params.lam, 0.0, params.psi)

    dist = to_gmn(params)
    der = derive(dist)
    omega = der.omega
    a = x @ der.eta
    if isinstance(params, Sn):
        return math.log(2.0) + mvn_logpdf(x, np.zeros(d), omega) + log_std_normal_cdf(a)
    if isinstance(params, Esn):
        return mvn_logpdf(x, np.zeros(d), omega) + log_std_normal_cdf(der.tau_bar + a) - log_std_normal_cdf(params.tau)
    if isinstance(params, Mmmne):
        if der.alpha_sq == 0.0:
            return mvn_logpdf(x, np.zeros(d), params.sigma)
        alpha = der.alpha
        b = x @ der.sigma_inv_gamma
        return mvn_logpdf(x, np.zeros(d), params.sigma) - math.log(alpha) - log_zeta((b - 1.0) / alpha)
    if isinstance(params, RayleighMix):
        return (
            0.5 * LOG_2PI
            - 0.5 * math.log1p(der.alpha_sq)
            + mvn_logpdf(x, np.zeros(d), omega)
            + _log_phi_plus_a_cdf(a)
        )
    if isinstance(params, ChiMix):
        nu = params.nu
        if not float(nu).is_integer():
            raise UnsupportedVariantError("the chi-mixture closed form needs an integer nu; use pdf_numeric")
        nu = int(nu)
        const = (
            math.log(2.0)
            + 0.5 * math.log(math.pi)
            - special.gammaln(0.5 * nu)
            - 0.5 * (nu - 1) * math.log(2.0 * (1.0 + der.alpha_sq))
        )
        return const + mvn_logpdf(x, np.zeros(d), omega) + log_std_normal_cdf(a) + chimix_log_m(nu - 1, a)
    if isinstance(params, (SkewT, Est)):
        nu = params.nu
        tau = params.tau if isinstance(params, Est) else 0.0
        log_t, q = _log_t_density(x, omega, nu)
        arg = (math.sqrt(1.0 + der.alpha_sq) * tau + a) * np.sqrt((nu + d) / (nu + q))
        return log_t + student_t_logcdf(arg, nu + d) - student_t_logcdf(tau, nu)
    raise UnsupportedVariantError(type(params).__name__)


def closed_pdf(params, y):
    """Closed-form density of a family at a point or rows of points."""
    return np.exp(closed_logpdf(params, y))


# ---------------------------------------------------------------------------
# Mardia fast path for GH


def family_mardia(params) -> MardiaReport:
    """Mardia measures of a GH-type family from integer moments of ``V``.

    For a variance-mean mixture ``E[R^h S^k] = E[V^(h + k/2)]`` and every
    moment the measures need has even ``k``, so only ``E V .. E V^4`` enter.
    """
    if isinstance(params, (Gh, Sichel)):
        law = mx.Gig(params.lam, params.chi if isinstance(params, Gh) else 0.0, params.psi)
        v = {p: law.moment(p) for p in (1, 2, 3, 4)}
        mu = {
            (1, 0): v[1], (2, 0): v[2], (3, 0): v[3], (4, 0): v[4],
            (0, 2): v[1], (0, 4): v[2], (1, 2): v[2], (2, 2): v[3],
        }
        al2 = float(params.gamma @ params.sigma.solve(params.gamma))
    elif isinstance(params, (SymGh, StudentT)):
        law = mx.Gig(params.lam, params.chi, params.psi) if isinstance(params, SymGh) else mx.InverseChiSqScaled(params.nu)
        v1, v2 = law.moment(1), law.moment(2)
        mu = {(0, 2): v1, (0, 4): v2}
        al2 = 0.0
    else:
        raise UnsupportedVariantError("the fast path covers GH, Sichel, symmetric GH and Student t")
    return mardia_from_moments(params.dim, al2, mu)


def gh_marginal(params, indices):
    """Marginal of a GH-type family as a family record of the same kind.

    The sub-block ``Sigma_II`` is rescaled to unit determinant and the
    factor is absorbed into the mixing law through ``V -> c V``, together
    with ``gamma_I -> gamma_I / c`` so that ``R gamma`` is unchanged.
    """
    idx = [int(i) for i in indices]
    sub = params.sigma.matrix[np.ix_(idx, idx)]
    k = len(idx)
    c = float(np.linalg.det(sub)) ** (1.0 / k)
    sub_unit = sub / c
    xi = params.xi[idx]
    if isinstance(params, Gh):
        return Gh(params.lam, params.chi * c, params.psi / c, xi, sub_unit, params.gamma[idx] / c)
    if isinstance(params, SymGh):
        return SymGh(params.lam, params.chi * c, params.psi / c, xi, sub_unit)
    if isinstance(params, Sichel):
        return Sichel(params.lam, params.psi / c, xi, sub_unit, params.gamma[idx] / c)
    raise UnsupportedVariantError("gh_marginal applies to GH, symmetric GH and Sichel records")


def family_marginal(params, indices):
    """Marginal of a family record as a record of the same family.

    The mixing law does not depend on the dimension, so slicing
    ``(xi, Sigma, gamma)`` suffices; GH-type records also renormalize
    ``Sigma`` through :func:`gh_marginal`.
    """
    idx = [int(i) for i in indices]
    if not idx or len(set(idx)) != len(idx) or min(idx) < 0 or max(idx) >= params.dim:
        raise ValidationError("indices must be distinct and within range")
    if params.unit_det:
        return gh_marginal(params, idx)
    kwargs = {}
    for f in fields(params):
        v = getattr(params, f.name)
        if f.name == "sigma":
            v = v.matrix[np.ix_(idx, idx)]
        elif f.name in ("xi", "gamma"):
            v = v[idx]
        kwargs[f.name] = v
    return type(params)(**kwargs)
