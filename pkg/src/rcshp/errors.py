"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid dimensions, model parameters, or schedule constants."""


class DataError(ValueError):
    """Input data violates a contract (e.g. covariance not PSD within tolerance)."""


class NumericalError(ArithmeticError):
    """A linear solve or factorization failed or is untrustworthy."""


class OptimizerError(RuntimeError):
    """An inner convex subproblem failed to reach its stationarity tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
