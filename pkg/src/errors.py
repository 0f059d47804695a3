"""Exception hierarchy shared by the library and the command line."""
from typing import Optional


class QtbpError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(QtbpError, ValueError):
    """An argument is outside the domain an operation accepts."""


class NumericalDomainError(QtbpError, ArithmeticError):
    """A numeric quantity left its valid domain (e.g. an improper Gaussian)."""


class CapacityError(QtbpError):
    """An exact computation would exceed its state-space bound."""


class EstimationError(QtbpError):
    """A closed-form estimate has no data to work from."""


class ConfigError(QtbpError):
    """Run configuration is invalid."""


class KindMismatchError(QtbpError):
    """A checkpoint belongs to a different model kind than requested."""


class TrainingDivergedError(QtbpError):
    """Every learning rate tried produced a non-finite loss."""


class DatasetFormatError(QtbpError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class CheckpointFormatError(QtbpError):
    """A checkpoint file is corrupt or structurally inconsistent."""

    def __init__(self, message: str, field: str):
        self.field = field
        super().__init__(f"{field}: {message}")
