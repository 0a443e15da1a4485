"""
Custom exceptions and the CLI exit-code mapping.
"""
from typing import List, Optional


class SteinForgeError(Exception):
    """Base class for every error raised by the library."""
    pass


class DimensionError(SteinForgeError):
    """Raised when array shapes do not chain or match."""
    pass


class ContractError(SteinForgeError):
    """Raised when a caller violates an operation precondition."""
    pass


class NonFiniteError(SteinForgeError):
    """Raised when NaN/Inf enters from external input or appears mid-training."""
    pass


class DivergenceError(SteinForgeError):
    """Raised when a particle or sample coordinate exceeds the divergence guard."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


class SolverError(SteinForgeError):
    """Raised when the least-squares normal equations cannot be solved."""
    pass


class ConfigValidationError(SteinForgeError):
    """Raised when an experiment config or environment fails validation."""

    def __init__(self, message: str, offending: Optional[List[str]] = None):
        super().__init__(message)
        self.offending = list(offending or [])


class DatasetFormatError(SteinForgeError):
    """Raised when an IDX file or synthetic dataset spec is malformed."""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class OutputError(SteinForgeError):
    """Raised when an output directory or artifact cannot be written."""
    pass


EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_IO = 4
EXIT_OTHER = 5


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the process exit code used by the CLI."""
    if isinstance(exc, ConfigValidationError):
        return EXIT_CONFIG
    if isinstance(exc, (DivergenceError, NonFiniteError)):
        return EXIT_ABORT
    if isinstance(exc, (OutputError, DatasetFormatError, OSError)):
        return EXIT_IO
    return EXIT_OTHER
