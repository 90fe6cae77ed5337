"""
Domain exceptions and the command-level error carrying a process exit code.
"""

from typing import Optional

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_DIVERGED = 3


class LmatchError(Exception):
    """Base class for toolkit errors."""


class ScheduleError(LmatchError, ValueError):
    """Invalid noise schedule request or time pair."""


class TimeGridError(LmatchError, ValueError):
    """A time grid cannot be constructed or is malformed."""


class DimensionError(LmatchError, ValueError):
    """Array shapes disagree with model or data dimensions."""


class FamilyError(LmatchError, ValueError):
    """Operation not available for the mixture family."""


class CovariancePositivityError(LmatchError, ValueError):
    """Whitened diagonal 1 + sigma2 * u is not positive."""

    def __init__(self, min_whitened_diag: float, message: Optional[str] = None):
        self.min_whitened_diag = float(min_whitened_diag)
        super().__init__(
            message or f"Covariance not positive definite: min whitened diagonal {self.min_whitened_diag:.6g}"
        )


class LinearAlgebraError(LmatchError, ValueError):
    """Cholesky or solve failure on a matrix that should be SPD."""


class InsufficientSamplesError(LmatchError, ValueError):
    """Too few samples for the requested estimator."""


class TrainingDivergedError(LmatchError, RuntimeError):
    """Loss stayed non-finite for too many consecutive steps."""

    def __init__(self, step: int, consecutive: int):
        self.step = step
        self.consecutive = consecutive
        super().__init__(f"Training diverged at step {step}: {consecutive} consecutive non-finite losses")


class ConfigError(LmatchError, ValueError):
    """Configuration failed to parse or validate."""

    def __init__(self, message: str, field_path: Optional[str] = None):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}" if field_path else message)


class InputFormatError(LmatchError, ValueError):
    """An input file is malformed."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class CommandError(Exception):
    """Raised by CLI commands; carries the process exit code."""

    def __init__(self, exit_code: int, detail: str):
        self.exit_code = exit_code
        self.detail = detail
        super().__init__(detail)
