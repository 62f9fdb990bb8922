"""Exception types shared across the package."""


class GpemuError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(GpemuError, ValueError):
    """Bad user input: domain violations, shape mismatches, malformed files."""


class NumericalError(GpemuError, RuntimeError):
    """A computation failed for numerical reasons rather than bad input."""


class ConditioningError(NumericalError):
    """Cholesky factorization failed even after diagonal inflation."""

    def __init__(self, message, attempted_jitters=()):
        super().__init__(message)
        self.attempted_jitters = tuple(attempted_jitters)


class FitError(NumericalError):
    """Hyperparameter estimation failed; carries the fit report when available."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PriorError(NumericalError):
    """A prior evaluation failed beyond the tolerated numerical slack."""

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class CalibrationError(NumericalError):
    """MCMC calibration failed; carries the partial chain when available."""

    def __init__(self, message, chain=None):
        super().__init__(message)
        self.chain = chain
