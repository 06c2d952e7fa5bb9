# core/errors.py

"""Exception hierarchy for the multiproduct package."""
from typing import Optional, Sequence


class MultiproductError(Exception):
    """Base class for all package errors."""


class GridMismatchError(MultiproductError, ValueError):
    """Raised when fields, symbols or operators live on different grids."""


class SymbolEvaluationError(MultiproductError, ValueError):
    """Raised when a symbol evaluates to NaN or Inf."""

    def __init__(self, message: str, x: Sequence[float] = (), xi: Sequence[float] = ()):
        super().__init__(message)
        self.x = tuple(float(v) for v in x)
        self.xi = tuple(float(v) for v in xi)


class EllipticityError(MultiproductError):
    """Raised when an ellipticity check cannot be carried out or fails hard."""


class ConvergenceError(MultiproductError):
    """Raised when an iterative method does not reach its tolerance."""

    def __init__(self, message: str, best_estimate=None, residual: Optional[float] = None):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.residual = residual


class SupportMarginError(MultiproductError):
    """Raised when a partition function gets too close to a chart boundary."""


class IdentityCheckError(MultiproductError):
    """Raised when sum_i phi_i Q phi_i does not reproduce A."""


class OverlapError(MultiproductError, ValueError):
    """Raised when a point lies outside a transition-map overlap."""


class ConfigError(MultiproductError):
    """Raised for invalid experiment configuration; carries the field path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.reason = message


class OutputError(MultiproductError):
    """Raised when results cannot be written."""
