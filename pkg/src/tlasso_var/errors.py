"""Exception hierarchy shared by the estimation, spillover and data modules.

Two families are distinguished because the CLI maps them onto different exit
codes:

    - DataError: the inputs are unusable (too short, misaligned, malformed).
    - NumericalError: the inputs are fine but the computation cannot proceed
      (singular design, non-stationary model, undefined covariance).
"""

from __future__ import annotations

from collections.abc import Sequence


class TlassoVarError(Exception):
    """Base class for every error raised by this package."""


class DataError(TlassoVarError, ValueError):
    """Raised when input data violates a documented precondition."""


class InsufficientDataError(DataError):
    """Raised when a series is too short for the requested lag order or window."""


class DimensionError(DataError):
    """Raised when array shapes do not line up."""


class ParameterError(DataError):
    """Raised when a scalar parameter is outside its admissible range."""


class ParseError(DataError):
    """Raised when an input file row cannot be parsed or violates an invariant."""

    def __init__(self, message: str, *, row: int | None = None) -> None:
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(f"{prefix}{message}")


class AlignmentError(DataError):
    """Raised when series do not share the same set of dates."""

    def __init__(self, message: str, *, dates: Sequence[object] = ()) -> None:
        self.dates = list(dates)
        listed = ", ".join(str(date) for date in self.dates[:10])
        more = f" (+{len(self.dates) - 10} more)" if len(self.dates) > 10 else ""
        detail = f": {listed}{more}" if self.dates else ""
        super().__init__(f"{message}{detail}")


class NumericalError(TlassoVarError, RuntimeError):
    """Raised when a computation is undefined for otherwise valid inputs."""


class SingularDesignError(NumericalError):
    """Raised when X'X is not invertible and least squares is undefined."""


class NonStationaryError(NumericalError):
    """Raised when an operation requires a stationary VAR."""


class SingularDispersionError(NumericalError):
    """Raised when the error dispersion matrix has a zero or negative variance."""


class DistributionDomainError(NumericalError):
    """Raised when a moment of the error distribution does not exist."""
