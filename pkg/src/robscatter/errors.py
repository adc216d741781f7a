"""Exception types raised across the package."""


class ScatterError(Exception):
    """Base class for all package errors."""


class ParameterError(ScatterError, ValueError):
    """An argument is outside its admissible range."""


class SingularMatrixError(ScatterError, ArithmeticError):
    """A matrix expected to be positive definite failed its Cholesky factorization."""


class DegenerateInputError(ScatterError, ValueError):
    """The input data cannot be processed by the requested estimator (e.g. a zero
    sample fed to Tyler's weight)."""


class SolverError(ScatterError, ArithmeticError):
    """A scalar root finder could not bracket or locate a root."""


class UnsupportedError(ScatterError, NotImplementedError):
    """The requested (estimator, model) combination has no closed form."""


class SingularCoefficientError(ScatterError, ArithmeticError):
    """The generic coefficient formulas are singular for the given moments."""
