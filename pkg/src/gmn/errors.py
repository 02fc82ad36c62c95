"""Exception hierarchy shared by every module of the package."""


class GmnError(Exception):
    """Base class for all package errors."""


class ValidationError(GmnError, ValueError):
    """Raised when a parameter, matrix or model description is invalid."""


class DimensionError(ValidationError):
    """Raised when array shapes do not conform."""


class UnsupportedVariantError(GmnError, TypeError):
    """Raised when an operation is requested for a variant that lacks it."""


class QuadratureError(GmnError, ArithmeticError):
    """Raised when an adaptive quadrature fails to reach its tolerance.

    The best available estimate and its error estimate travel with the
    exception so callers can decide whether the value is still usable.
    """

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error
