"""Generalized mixtures of normals.

``Y = xi + R gamma + S X`` with ``X ~ N_d(0, Sigma)`` independent of the
mixing pair ``(R, S) = (r(U, V), s(U, V))``.  The package provides exact
sampling, quadrature densities, moments, Mardia measures, closure
operations, closed forms for the named families and an EM fitter for the
chi-mixture family.
"""

from .core import (
    CdfEstimate,
    ConditionalGmn,
    DerivedParams,
    GmnDistribution,
    MardiaReport,
    QuadFormReport,
    Undefined,
    affine,
    cdf,
    char_function,
    conditional,
    covariance,
    derive,
    gmn_from_json,
    logpdf_numeric,
    mardia,
    marginal,
    mean,
    pdf_numeric,
    quad_form_report,
    sample,
)
from .errors import DimensionError, GmnError, QuadratureError, UnsupportedVariantError, ValidationError
from .families import (
    ChiMix,
    Esn,
    Est,
    Gh,
    Mmmne,
    RayleighMix,
    Sichel,
    SkewT,
    Sn,
    StudentT,
    SymGh,
    closed_logpdf,
    closed_pdf,
    family_marginal,
    to_gmn,
)
from .fitting import FitConfig, FitResult, em_fit_chimix, loglik, parametric_bootstrap, profile_nu
from .io import load_model, model_from_json
from .specfun import SpdMatrix

__version__ = "0.1.0"

__all__ = [
    "CdfEstimate",
    "ConditionalGmn",
    "DerivedParams",
    "GmnDistribution",
    "MardiaReport",
    "QuadFormReport",
    "Undefined",
    "affine",
    "cdf",
    "char_function",
    "conditional",
    "covariance",
    "derive",
    "gmn_from_json",
    "logpdf_numeric",
    "mardia",
    "marginal",
    "mean",
    "pdf_numeric",
    "quad_form_report",
    "sample",
    "DimensionError",
    "GmnError",
    "QuadratureError",
    "UnsupportedVariantError",
    "ValidationError",
    "ChiMix",
    "Esn",
    "Est",
    "Gh",
    "Mmmne",
    "RayleighMix",
    "Sichel",
    "SkewT",
    "Sn",
    "StudentT",
    "SymGh",
    "closed_logpdf",
    "closed_pdf",
    "family_marginal",
    "to_gmn",
    "FitConfig",
    "FitResult",
    "em_fit_chimix",
    "loglik",
    "parametric_bootstrap",
    "profile_nu",
    "load_model",
    "model_from_json",
    "SpdMatrix",
]
