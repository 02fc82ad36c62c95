"""Mixing laws for U and V, the (r, s) composition rules and their moments.

A *law* is a univariate distribution used for one of the mixing variables.
A *composition* (``MixingSpec``) combines one or two independent laws into
the pair ``(R, S) = (r(U, V), s(U, V))``.  All scale-bearing laws come in a
fixed standard scale; free scales live in the ``gamma`` and ``Sigma``
parameters of the full model.

Nonexistent moments are encoded as data: ``inf`` for a divergent moment and
``nan`` for an undefined one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import ClassVar, Dict, Tuple

import numpy as np
from scipy import integrate, special

from . import quadrature
from .errors import UnsupportedVariantError, ValidationError
from .specfun import log_bessel_k, log_std_normal_cdf, student_t_logcdf

__all__ = [
    "HalfNormal",
    "TruncatedNormalBelow",
    "Exponential",
    "Rayleigh",
    "ChiNu",
    "TwoPieceNormal",
    "Gig",
    "InverseChiSqScaled",
    "SlashPower",
    "TwoPoint",
    "Degenerate",
    "TruncatedT",
    "MeanOnly",
    "ScaleOnly",
    "VarianceMean",
    "SnScaleMix",
    "EstRule",
    "MomentSet",
    "moments",
    "sample_rs",
    "rs_density",
    "rs_quadrature_nodes",
    "law_from_json",
    "spec_from_json",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LAWS: Dict[str, type] = {}
_SPECS: Dict[str, type] = {}


def _check_positive(name, value):
    if not (math.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be a positive finite number, got {value}")


def _check_finite(name, value):
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value}")


def _abs_normal_moment(p):
    # E|Z|^p for Z ~ N(0, 1)
    return math.exp(0.5 * p * math.log(2.0) + special.gammaln(0.5 * (p + 1.0)) - 0.5 * math.log(math.pi))


def _is_int(p):
    return float(p).is_integer()


class _Law:
    """Common behaviour of the univariate mixing laws."""

    kind: ClassVar[str] = ""

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.kind:
            _LAWS[cls.kind] = cls

    # overridden by subclasses -------------------------------------------
    @property
    def support(self) -> Tuple[float, float]:
        raise NotImplementedError

    def logpdf(self, u):
        raise NotImplementedError

    def sample(self, rng, n):
        raise NotImplementedError

    def moment(self, p: float) -> float:
        raise NotImplementedError

    def quad_pieces(self):
        lo, hi = self.support
        if math.isinf(lo):
            raise NotImplementedError
        return [("half", lo, 1.0)]

    def atoms(self):
        return None

    # shared -------------------------------------------------------------
    @property
    def is_atomic(self) -> bool:
        return self.atoms() is not None

    @property
    def is_positive(self) -> bool:
        """Whether the law puts all its mass on (0, inf)."""
        atoms = self.atoms()
        if atoms is not None:
            return bool(np.all(np.asarray(atoms[0]) > 0))
        return self.support[0] >= 0

    def pdf(self, u):
        return np.exp(self.logpdf(u))

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        for f in fields(self):
            out[f.name] = getattr(self, f.name)
        return out


def law_from_json(obj: dict):
    """Rebuild a law from its JSON object (``"kind"`` selects the variant)."""
    try:
        cls = _LAWS[obj["kind"]]
    except KeyError as exc:
        raise ValidationError(f"unknown mixing law {obj.get('kind')!r}") from exc
    kwargs = {k: v for k, v in obj.items() if k != "kind"}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad fields for law {obj['kind']!r}: {exc}") from exc


@dataclass(frozen=True)
class HalfNormal(_Law):
    """|Z| with Z ~ N(0, 1)."""

    kind: ClassVar[str] = "half_normal"

    @property
    def support(self):
        return (0.0, math.inf)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(u >= 0, math.log(2.0) - _LOG_SQRT_2PI - 0.5 * u * u, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > 0, special.erf(u / math.sqrt(2.0)), 0.0)

    def sample(self, rng, n):
        return np.abs(rng.standard_normal(n))

    def moment(self, p):
        return _abs_normal_moment(p)


@dataclass(frozen=True)
class TruncatedNormalBelow(_Law):
    """N(0, 1) restricted to ``u > -tau``."""

    kind: ClassVar[str] = "truncated_normal_below"
    tau: float = 0.0

    def __post_init__(self):
        _check_finite("tau", self.tau)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def support(self):
        return (-self.tau, math.inf)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        base = -_LOG_SQRT_2PI - 0.5 * u * u - log_std_normal_cdf(self.tau)
        return np.where(u > -self.tau, base, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        # P(U <= u) = 1 - Phi(-u) / Phi(tau) on the support
        val = 1.0 - np.exp(log_std_normal_cdf(-u) - log_std_normal_cdf(self.tau))
        return np.where(u > -self.tau, val, 0.0)

    def sample(self, rng, n):
        # -U is N(0,1) truncated above tau; invert its cdf on (0, Phi(tau))
        w = rng.random(n)
        return -special.ndtri(w * special.ndtr(self.tau))

    def moment(self, p):
        if not _is_int(p):
            return math.nan
        from .specfun import truncnorm_moments

        return float(truncnorm_moments(-self.tau, int(p))[int(p)])

    def quad_pieces(self):
        lo = -self.tau
        if lo >= 0:
            return [("half", lo, 1.0)]
        return [("finite", lo, 0.0), ("half", 0.0, 1.0)]


@dataclass(frozen=True)
class Exponential(_Law):
    """Standard exponential, rate 1."""

    kind: ClassVar[str] = "exponential"

    @property
    def support(self):
        return (0.0, math.inf)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u >= 0, -u, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > 0, -np.expm1(-u), 0.0)

    def sample(self, rng, n):
        return rng.standard_exponential(n)

    def moment(self, p):
        return math.gamma(p + 1.0)


@dataclass(frozen=True)
class Rayleigh(_Law):
    """Standard Rayleigh, density ``u exp(-u^2/2)`` on u > 0."""

    kind: ClassVar[str] = "rayleigh"

    @property
    def support(self):
        return (0.0, math.inf)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(u > 0, np.log(np.where(u > 0, u, 1.0)) - 0.5 * u * u, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > 0, -np.expm1(-0.5 * u * u), 0.0)

    def sample(self, rng, n):
        return np.sqrt(2.0 * rng.standard_exponential(n))

    def moment(self, p):
        return math.exp(0.5 * p * math.log(2.0) + special.gammaln(1.0 + 0.5 * p))


@dataclass(frozen=True)
class ChiNu(_Law):
    """Chi distribution with ``nu`` degrees of freedom."""

    kind: ClassVar[str] = "chi"
    nu: float = 1.0

    def __post_init__(self):
        _check_positive("nu", self.nu)

    @property
    def support(self):
        return (0.0, math.inf)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        nu = self.nu
        const = (1.0 - 0.5 * nu) * math.log(2.0) - special.gammaln(0.5 * nu)
        with np.errstate(divide="ignore", invalid="ignore"):
            core = (nu - 1.0) * np.log(np.where(u > 0, u, 1.0)) - 0.5 * u * u + const
        return np.where(u > 0, core, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > 0, special.gammainc(0.5 * self.nu, 0.5 * u * u), 0.0)

    def sample(self, rng, n):
        return np.sqrt(rng.chisquare(self.nu, n))

    def moment(self, p):
        nu = self.nu
        return math.exp(0.5 * p * math.log(2.0) + special.gammaln(0.5 * (nu + p)) - special.gammaln(0.5 * nu))


@dataclass(frozen=True)
class TwoPieceNormal(_Law):
    """Two half-normals glued at zero.

    Density ``2 pi_a phi(u; a^2)`` for ``u > 0`` and ``2 pi_b phi(u; b^2)``
    for ``u <= 0``, with ``pi_a + pi_b = 1``.
    """

    kind: ClassVar[str] = "two_piece_normal"
    pi_a: float = 0.5
    a: float = 1.0
    pi_b: float = 0.5
    b: float = 1.0

    def __post_init__(self):
        _check_positive("a", self.a)
        _check_positive("b", self.b)
        if not (0 <= self.pi_a <= 1 and 0 <= self.pi_b <= 1) or abs(self.pi_a + self.pi_b - 1.0) > 1e-12:
            raise ValidationError("pi_a and pi_b must be probabilities summing to 1")

    @property
    def support(self):
        return (-math.inf if self.pi_b > 0 else 0.0, math.inf if self.pi_a > 0 else 0.0)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            pos = math.log(2.0 * self.pi_a) - math.log(self.a) - _LOG_SQRT_2PI - 0.5 * (u / self.a) ** 2
            neg = math.log(2.0 * self.pi_b) - math.log(self.b) - _LOG_SQRT_2PI - 0.5 * (u / self.b) ** 2
        return np.where(u > 0, pos, neg)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        neg = 2.0 * self.pi_b * special.ndtr(u / self.b)
        pos = self.pi_b + self.pi_a * special.erf(u / (self.a * math.sqrt(2.0)))
        return np.where(u > 0, pos, neg)

    def sample(self, rng, n):
        z = np.abs(rng.standard_normal(n))
        upper = rng.random(n) < self.pi_a
        return np.where(upper, self.a * z, -self.b * z)

    def moment(self, p):
        if not _is_int(p):
            return math.nan
        m = _abs_normal_moment(p)
        return self.pi_a * self.a**p * m + self.pi_b * (-self.b) ** p * m

    def quad_pieces(self):
        pieces = []
        if self.pi_a > 0:
            pieces.append(("half", 0.0, 1.0))
        if self.pi_b > 0:
            pieces.append(("half", 0.0, -1.0))
        return pieces


# ---------------------------------------------------------------------------
# generalized inverse Gaussian


def _gig_mode(lam, omega):
    # mode of x^(lam-1) exp(-omega/2 (x + 1/x))
    if lam >= 1.0:
        return (math.sqrt((lam - 1.0) ** 2 + omega * omega) + (lam - 1.0)) / omega
    return omega / (math.sqrt((1.0 - lam) ** 2 + omega * omega) + (1.0 - lam))


def _fill(rng, n, propose):
    """Collect ``n`` accepted draws from a vectorized proposal/accept step."""
    out = np.empty(n)
    filled = 0
    batch = max(16, n)
    while filled < n:
        x = propose(batch)
        take = min(x.size, n - filled)
        out[filled:filled + take] = x[:take]
        filled += take
        batch = max(16, int(1.3 * (n - filled)) + 16)
    return out


def _rgig_rou_noshift(rng, n, lam, omega):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + math.sqrt((lam + 1.0) ** 2 + omega * omega)) / omega
    um = math.exp(0.5 * (lam + 1.0) * math.log(ym) - s * (ym + 1.0 / ym) - nc)

    def propose(m):
        u = um * rng.random(m)
        v = 1.0 - rng.random(m)
        x = u / v
        with np.errstate(divide="ignore"):
            ok = np.log(v) <= t * np.log(x) - s * (x + 1.0 / x) - nc
        return x[ok & (x > 0)]

    return _fill(rng, n, propose)


def _rgig_rou_shift(rng, n, lam, omega):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    # bounding rectangle from the roots of a depressed cubic (Cardano)
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    fi = math.acos(-q / (2.0 * math.sqrt(-(p**3) / 27.0)))
    fak = 2.0 * math.sqrt(-p / 3.0)
    y1 = fak * math.cos(fi / 3.0) - a / 3.0
    y2 = fak * math.cos(fi / 3.0 + 4.0 / 3.0 * math.pi) - a / 3.0
    uplus = (y1 - xm) * math.exp(t * math.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * math.exp(t * math.log(y2) - s * (y2 + 1.0 / y2) - nc)

    def propose(m):
        u = uminus + rng.random(m) * (uplus - uminus)
        v = 1.0 - rng.random(m)
        x = u / v + xm
        pos = x > 0
        x = x[pos]
        v = v[pos]
        ok = np.log(v) <= t * np.log(x) - s * (x + 1.0 / x) - nc
        return x[ok]

    return _fill(rng, n, propose)


def _rgig_concave_hat(rng, n, lam, omega):
    # small lam and omega: piecewise constant / power / exponential hat
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = math.exp((lam - 1.0) * math.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    a0 = k0 * x0
    if x0 >= 2.0 / omega:
        k1 = 0.0
        a1 = 0.0
        k2 = x0 ** (lam - 1.0)
        a2 = k2 * 2.0 * math.exp(-omega * x0 / 2.0) / omega
    else:
        k1 = math.exp(-omega)
        if lam == 0.0:
            a1 = k1 * math.log(2.0 / (omega * omega))
        else:
            a1 = k1 / lam * ((2.0 / omega) ** lam - x0**lam)
        k2 = (2.0 / omega) ** (lam - 1.0)
        a2 = k2 * 2.0 * math.exp(-1.0) / omega
    total = a0 + a1 + a2
    edge = max(x0, 2.0 / omega)

    def propose(m):
        v = total * rng.random(m)
        x = np.empty(m)
        hx = np.empty(m)
        i0 = v <= a0
        x[i0] = x0 * v[i0] / a0
        hx[i0] = k0
        v1 = v - a0
        i1 = ~i0 & (v1 <= a1)
        if np.any(i1):
            if lam == 0.0:
                x[i1] = omega * np.exp(math.exp(omega) * v1[i1])
                hx[i1] = k1 / x[i1]
            else:
                x[i1] = (x0**lam + lam / k1 * v1[i1]) ** (1.0 / lam)
                hx[i1] = k1 * x[i1] ** (lam - 1.0)
        i2 = ~i0 & ~i1
        v2 = v1[i2] - a1
        x[i2] = -2.0 / omega * np.log(math.exp(-omega / 2.0 * edge) - omega / (2.0 * k2) * v2)
        hx[i2] = k2 * np.exp(-omega / 2.0 * x[i2])
        u = rng.random(m) * hx
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = np.log(u) <= (lam - 1.0) * np.log(x) - omega / 2.0 * (x + 1.0 / x)
        return x[ok & (x > 0) & np.isfinite(x)]

    return _fill(rng, n, propose)


def gig_sample(rng, n, lam, chi, psi):
    """Draw from N^-(lam, chi, psi) by ratio-of-uniforms / rejection.

    The standardized variate with density proportional to
    ``x^(lam-1) exp(-omega/2 (x + 1/x))``, ``omega = sqrt(chi psi)``, is
    generated for ``|lam|`` and mapped back by ``V = sqrt(chi/psi) X`` or its
    reciprocal.  Boundary cases ``chi = 0`` and ``psi = 0`` are Gamma and
    inverse Gamma laws.
    """
    if chi == 0.0:
        return rng.gamma(lam, 2.0 / psi, n)
    if psi == 0.0:
        return 0.5 * chi / rng.gamma(-lam, 1.0, n)
    omega = math.sqrt(chi * psi)
    alpha = math.sqrt(chi / psi)
    lam_abs = abs(lam)
    if lam_abs > 2.0 or omega > 3.0:
        x = _rgig_rou_shift(rng, n, lam_abs, omega)
    elif lam_abs >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        x = _rgig_rou_noshift(rng, n, lam_abs, omega)
    else:
        x = _rgig_concave_hat(rng, n, lam_abs, omega)
    return alpha / x if lam < 0 else alpha * x


@dataclass(frozen=True)
class Gig(_Law):
    """Generalized inverse Gaussian ``N^-(lam, chi, psi)``.

    Density proportional to ``v^(lam-1) exp(-(chi/v + psi v)/2)``.  The
    boundary ``chi = 0`` (needs ``lam > 0``) is the Gamma law with shape
    ``lam`` and rate ``psi/2``; ``psi = 0`` (needs ``lam < 0``) is the
    inverse Gamma law.
    """

    kind: ClassVar[str] = "gig"
    lam: float = -0.5
    chi: float = 1.0
    psi: float = 1.0

    def __post_init__(self):
        _check_finite("lam", self.lam)
        for name in ("chi", "psi"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ValidationError(f"{name} must be nonnegative and finite")
        if self.chi == 0 and not (self.lam > 0 and self.psi > 0):
            raise ValidationError("chi = 0 requires lam > 0 and psi > 0")
        if self.psi == 0 and not (self.lam < 0 and self.chi > 0):
            raise ValidationError("psi = 0 requires lam < 0 and chi > 0")

    @property
    def support(self):
        return (0.0, math.inf)

    def _log_norm(self):
        lam, chi, psi = self.lam, self.chi, self.psi
        if chi == 0.0:
            return lam * math.log(0.5 * psi) - special.gammaln(lam)
        if psi == 0.0:
            return -lam * math.log(0.5 * chi) - special.gammaln(-lam)
        return 0.5 * lam * math.log(psi / chi) - math.log(2.0) - log_bessel_k(lam, math.sqrt(chi * psi))

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        pos = u > 0
        safe = np.where(pos, u, 1.0)
        core = self._log_norm() + (self.lam - 1.0) * np.log(safe) - 0.5 * (self.chi / safe + self.psi * safe)
        return np.where(pos, core, -np.inf)

    def sample(self, rng, n):
        return gig_sample(rng, n, self.lam, self.chi, self.psi)

    def moment(self, p):
        lam, chi, psi = self.lam, self.chi, self.psi
        if p == 0:
            return 1.0
        if chi == 0.0:
            if lam + p <= 0:
                return math.inf
            return math.exp(special.gammaln(lam + p) - special.gammaln(lam) + p * math.log(2.0 / psi))
        if psi == 0.0:
            if p >= -lam:
                return math.inf
            return math.exp(p * math.log(0.5 * chi) + special.gammaln(-lam - p) - special.gammaln(-lam))
        omega = math.sqrt(chi * psi)
        return math.exp(0.5 * p * math.log(chi / psi) + log_bessel_k(lam + p, omega) - log_bessel_k(lam, omega))

    def scaled(self, c: float) -> "Gig":
        """Law of ``c V`` for ``c > 0``."""
        _check_positive("c", c)
        return Gig(self.lam, self.chi * c, self.psi / c)


@dataclass(frozen=True)
class InverseChiSqScaled(_Law):
    """``V = nu / X`` with ``X ~ chi^2_nu``."""

    kind: ClassVar[str] = "inverse_chi2_scaled"
    nu: float = 1.0

    def __post_init__(self):
        _check_positive("nu", self.nu)

    @property
    def support(self):
        return (0.0, math.inf)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        a = 0.5 * self.nu
        pos = u > 0
        safe = np.where(pos, u, 1.0)
        core = a * math.log(a) - special.gammaln(a) - (a + 1.0) * np.log(safe) - a / safe
        return np.where(pos, core, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        a = 0.5 * self.nu
        with np.errstate(divide="ignore"):
            return np.where(u > 0, special.gammaincc(a, a / np.where(u > 0, u, 1.0)), 0.0)

    def sample(self, rng, n):
        return self.nu / rng.chisquare(self.nu, n)

    def moment(self, p):
        a = 0.5 * self.nu
        if p >= a:
            return math.inf
        return math.exp(p * math.log(a) + special.gammaln(a - p) - special.gammaln(a))


@dataclass(frozen=True)
class SlashPower(_Law):
    """``V = W^(-r)`` with ``W ~ U(0, 1)``."""

    kind: ClassVar[str] = "slash_power"
    r: float = 1.0

    def __post_init__(self):
        _check_positive("r", self.r)

    @property
    def support(self):
        return (1.0, math.inf)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        safe = np.where(u > 1, u, 1.0)
        core = -math.log(self.r) - (1.0 / self.r + 1.0) * np.log(safe)
        return np.where(u > 1, core, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > 1, -np.expm1(-np.log(np.where(u > 1, u, 1.0)) / self.r), 0.0)

    def sample(self, rng, n):
        return (1.0 - rng.random(n)) ** (-self.r)

    def moment(self, p):
        if p * self.r >= 1.0:
            return math.inf
        return 1.0 / (1.0 - self.r * p)


@dataclass(frozen=True)
class TwoPoint(_Law):
    """``P(V = v1) = p``, ``P(V = v2) = 1 - p``."""

    kind: ClassVar[str] = "two_point"
    v1: float = 1.0
    v2: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        _check_finite("v1", self.v1)
        _check_finite("v2", self.v2)
        if not 0 <= self.p <= 1:
            raise ValidationError("p must lie in [0, 1]")

    @property
    def support(self):
        return (min(self.v1, self.v2), max(self.v1, self.v2))

    def atoms(self):
        return (np.array([self.v1, self.v2]), np.array([self.p, 1.0 - self.p]))

    def logpdf(self, u):
        raise UnsupportedVariantError("two-point law has no density")

    def sample(self, rng, n):
        return np.where(rng.random(n) < self.p, self.v1, self.v2)

    def moment(self, p):
        if self.is_positive or _is_int(p):
            return self.p * self.v1**p + (1.0 - self.p) * self.v2**p
        return math.nan


@dataclass(frozen=True)
class Degenerate(_Law):
    """Point mass at ``c``."""

    kind: ClassVar[str] = "degenerate"
    c: float = 1.0

    def __post_init__(self):
        _check_finite("c", self.c)

    @property
    def support(self):
        return (self.c, self.c)

    def atoms(self):
        return (np.array([self.c]), np.array([1.0]))

    def logpdf(self, u):
        raise UnsupportedVariantError("degenerate law has no density")

    def sample(self, rng, n):
        return np.full(n, float(self.c))

    def moment(self, p):
        if self.c > 0 or _is_int(p):
            return float(self.c) ** p
        return math.nan


@dataclass(frozen=True)
class TruncatedT(_Law):
    """Standard Student t with ``nu`` degrees of freedom restricted to ``u > -tau``."""

    kind: ClassVar[str] = "truncated_t"
    nu: float = 1.0
    tau: float = 0.0

    def __post_init__(self):
        _check_positive("nu", self.nu)
        _check_finite("tau", self.tau)

    @property
    def support(self):
        return (-self.tau, math.inf)

    def _log_t(self, u):
        nu = self.nu
        c = special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * math.log(nu * math.pi)
        return c - 0.5 * (nu + 1.0) * np.log1p(u * u / nu)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > -self.tau, self._log_t(u) - student_t_logcdf(self.tau, self.nu), -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        upper = np.exp(student_t_logcdf(-u, self.nu) - student_t_logcdf(self.tau, self.nu))
        return np.where(u > -self.tau, 1.0 - upper, 0.0)

    def sample(self, rng, n):
        w = rng.random(n)
        p = w * math.exp(student_t_logcdf(self.tau, self.nu))
        return -special.stdtrit(self.nu, p)

    def expect(self, fn) -> float:
        """``E[fn(U)]`` by adaptive quadrature on the truncated support."""
        lo = -self.tau

        def integrand(u):
            return fn(u) * math.exp(float(self.logpdf(u)))

        if lo < 0:
            left, _ = integrate.quad(integrand, lo, 0.0, epsabs=0.0, epsrel=1e-13, limit=200)
            right, _ = integrate.quad(integrand, 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
            return left + right
        val, _ = integrate.quad(integrand, lo, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
        return val

    def moment(self, p):
        if not _is_int(p) and self.tau > 0:
            return math.nan
        if p >= self.nu:
            return math.inf
        return self.expect(lambda u: u**p)

    def quad_pieces(self):
        lo = -self.tau
        if lo >= 0:
            return [("half", lo, 1.0)]
        return [("finite", lo, 0.0), ("half", 0.0, 1.0)]


# ---------------------------------------------------------------------------
# moments container


@dataclass(frozen=True)
class MomentSet:
    """Cross-moments ``mu[h, k] = E[R^h S^k]`` for ``h + k <= max_order``.

    Entries are floats; ``inf`` marks a divergent moment and ``nan`` an
    undefined one.
    """

    mu: Dict[Tuple[int, int], float]
    max_order: int

    def __getitem__(self, key):
        return self.mu[key]

    def status(self, h, k) -> str:
        v = self.mu[(h, k)]
        if math.isnan(v):
            return "undefined"
        if math.isinf(v):
            return "infinite"
        return "finite"

    def finite(self, *keys) -> bool:
        return all(math.isfinite(self.mu[k]) for k in keys)

    def to_json(self) -> dict:
        out = {}
        for (h, k), v in sorted(self.mu.items()):
            out[f"{h}{k}"] = v if math.isfinite(v) else self.status(h, k)
        return out


# ---------------------------------------------------------------------------
# compositions


def _lm(law, p):
    # E[X^0] = 1 exactly, whatever rounding the law's general formula carries
    return 1.0 if p == 0 else law.moment(p)


class _Spec:
    kind: ClassVar[str] = ""
    is_mean_only: ClassVar[bool] = False

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.kind:
            _SPECS[cls.kind] = cls

    @property
    def variables(self):
        raise NotImplementedError

    @property
    def is_atomic(self) -> bool:
        return all(v.is_atomic for v in self.variables)

    @property
    def has_atoms(self) -> bool:
        return any(v.is_atomic for v in self.variables)

    def sample_rs(self, rng, n):
        draws = [law.sample(rng, n) for law in self.variables]
        r, s = self.transform(*draws)
        return np.asarray(r, float) * np.ones(n), np.asarray(s, float) * np.ones(n)

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = val.to_json() if isinstance(val, _Law) else val
        return out


def _require_positive(law, role):
    if not isinstance(law, _Law):
        raise ValidationError(f"{role} must be a mixing law, got {type(law).__name__}")
    if role == "V" and not law.is_positive:
        raise ValidationError(f"law {law.kind!r} cannot play the V role (needs positive support)")


@dataclass(frozen=True)
class MeanOnly(_Spec):
    """``R = U``, ``S = 1``."""

    kind: ClassVar[str] = "mean_only"
    is_mean_only: ClassVar[bool] = True
    u: _Law = field(default_factory=HalfNormal)

    def __post_init__(self):
        _require_positive(self.u, "U")

    @property
    def variables(self):
        return (self.u,)

    def transform(self, u):
        u = np.asarray(u, float)
        return u, np.ones_like(u)

    def moment(self, h, k):
        return _lm(self.u, h)


@dataclass(frozen=True)
class ScaleOnly(_Spec):
    """``R = 0``, ``S = sqrt(V)``."""

    kind: ClassVar[str] = "scale_only"
    v: _Law = field(default_factory=lambda: InverseChiSqScaled(5.0))

    def __post_init__(self):
        _require_positive(self.v, "V")

    @property
    def variables(self):
        return (self.v,)

    def transform(self, v):
        v = np.asarray(v, float)
        return np.zeros_like(v), np.sqrt(v)

    def moment(self, h, k):
        if h > 0:
            return 0.0
        return _lm(self.v, 0.5 * k)


@dataclass(frozen=True)
class VarianceMean(_Spec):
    """``R = V``, ``S = sqrt(V)``."""

    kind: ClassVar[str] = "variance_mean"
    v: _Law = field(default_factory=Gig)

    def __post_init__(self):
        _require_positive(self.v, "V")

    @property
    def variables(self):
        return (self.v,)

    def transform(self, v):
        v = np.asarray(v, float)
        return v, np.sqrt(v)

    def moment(self, h, k):
        return _lm(self.v, h + 0.5 * k)


@dataclass(frozen=True)
class SnScaleMix(_Spec):
    """``R = U sqrt(V)``, ``S = sqrt(V)``."""

    kind: ClassVar[str] = "sn_scale_mix"
    u: _Law = field(default_factory=HalfNormal)
    v: _Law = field(default_factory=lambda: InverseChiSqScaled(5.0))

    def __post_init__(self):
        _require_positive(self.u, "U")
        _require_positive(self.v, "V")

    @property
    def variables(self):
        return (self.u, self.v)

    def transform(self, u, v):
        u = np.asarray(u, float)
        sv = np.sqrt(np.asarray(v, float))
        return u * sv, sv

    def moment(self, h, k):
        mv = _lm(self.v, 0.5 * (h + k))
        mu = _lm(self.u, h)
        if math.isnan(mu) or math.isnan(mv):
            return math.nan
        if mu == 0.0:
            return 0.0
        return mu * mv


@dataclass(frozen=True)
class EstRule(_Spec):
    """Extended skew-t composition.

    ``U`` is a Student t on ``nu`` degrees of freedom truncated below
    ``-tau``; ``V ~ (nu + 1) / chi^2_{nu + 1}``; ``R = U`` and
    ``S = sqrt((nu + U^2) / (nu + 1) * V)``.
    """

    kind: ClassVar[str] = "est_rule"
    nu: float = 5.0
    tau: float = 0.0

    def __post_init__(self):
        _check_positive("nu", self.nu)
        _check_finite("tau", self.tau)

    @property
    def u_law(self) -> TruncatedT:
        return TruncatedT(self.nu, self.tau)

    @property
    def v_law(self) -> InverseChiSqScaled:
        return InverseChiSqScaled(self.nu + 1.0)

    @property
    def variables(self):
        return (self.u_law, self.v_law)

    def transform(self, u, v):
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        return u, np.sqrt((self.nu + u * u) / (self.nu + 1.0) * v)

    def moment(self, h, k):
        nu = self.nu
        mv = _lm(self.v_law, 0.5 * k)
        if h + k >= nu:
            return math.inf
        if math.isinf(mv):
            return math.inf
        mu = self.u_law.expect(lambda u: u**h * ((nu + u * u) / (nu + 1.0)) ** (0.5 * k))
        return mu * mv


def spec_from_json(obj: dict):
    """Rebuild a mixing composition from its JSON object."""
    try:
        cls = _SPECS[obj["kind"]]
    except KeyError as exc:
        raise ValidationError(f"unknown mixing spec {obj.get('kind')!r}") from exc
    kwargs = {}
    for k, v in obj.items():
        if k == "kind":
            continue
        kwargs[k] = law_from_json(v) if isinstance(v, dict) else v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad fields for spec {obj['kind']!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# module-level operations


def moments(spec, max_order: int = 4) -> MomentSet:
    """Cross-moments ``E[R^h S^k]`` for ``h + k <= max_order`` (at most 4)."""
    if not 0 <= max_order <= 4:
        raise ValidationError("max_order must lie in [0, 4]")
    mu = {}
    for h in range(max_order + 1):
        for k in range(max_order + 1 - h):
            mu[(h, k)] = 1.0 if h == k == 0 else float(spec.moment(h, k))
    return MomentSet(mu, max_order)


def sample_rs(spec, rng, n: int):
    """Draw ``n`` iid pairs ``(R, S)``; returns two arrays."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    return spec.sample_rs(rng, n)


def rs_density(spec, r, s):
    """Density of (R, S) with respect to the natural dominating measure.

    For one-variable compositions the pair lives on a curve and the
    density is that of the free coordinate: ``g_U(r)`` at ``s = 1`` for
    mean mixtures, and the density of ``S`` for scale and variance-mean
    mixtures.  Two-variable compositions return a planar density.
    """
    if spec.has_atoms:
        raise UnsupportedVariantError("mixing spec has atoms and no density; use its atom list")
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if isinstance(spec, MeanOnly):
            out = np.where(s == 1.0, spec.u.pdf(r), 0.0)
        elif isinstance(spec, ScaleOnly):
            out = np.where((r == 0.0) & (s > 0), 2.0 * s * spec.v.pdf(s * s), 0.0)
        elif isinstance(spec, VarianceMean):
            out = np.where((s > 0) & (r == s * s), 2.0 * s * spec.v.pdf(s * s), 0.0)
        elif isinstance(spec, SnScaleMix):
            safe = np.where(s > 0, s, 1.0)
            out = np.where(s > 0, 2.0 * spec.u.pdf(r / safe) * spec.v.pdf(safe * safe), 0.0)
        elif isinstance(spec, EstRule):
            nu = spec.nu
            v = s * s * (nu + 1.0) / (nu + r * r)
            jac = 2.0 * s * (nu + 1.0) / (nu + r * r)
            out = np.where(s > 0, spec.u_law.pdf(r) * spec.v_law.pdf(v) * jac, 0.0)
        else:  # pragma: no cover - closed set of compositions
            raise UnsupportedVariantError(type(spec).__name__)
    return out if out.ndim else float(out)


def rs_quadrature_nodes(spec, budget: int = 10_000) -> quadrature.NodeSet:
    """Weighted nodes for integrating smooth functions of (R, S).

    Atoms are returned exactly; continuous coordinates use double-exponential
    rules sized to roughly ``budget`` nodes.
    """
    if budget < 4:
        raise ValidationError("budget must be at least 4")
    return quadrature.fixed_nodes(spec, budget)
