"""
Exception hierarchy shared by every lab module.
"""
from typing import Any, List, Optional


class LabError(Exception):
    """Base class for all lab errors."""


class InvalidInputError(LabError, ValueError):
    """An argument is outside the documented domain of an operation."""


class InvalidDimensionError(InvalidInputError):
    """A dimension is zero, negative or inconsistent."""


class NumericDomainError(LabError, ArithmeticError):
    """A non-finite value appeared where finite numbers are required."""


class DegenerateInputError(LabError, ValueError):
    """The input has no canonical image (e.g. normalizing a zero vector)."""


class DivergedError(LabError):
    """The attack objective became non-finite; carries the partial trace."""

    def __init__(self, message: str, partial_trace: Optional[Any] = None):
        super().__init__(message)
        self.partial_trace = partial_trace


class EstimationFailedError(LabError):
    """An estimator had no usable samples left."""


class DegenerateFitError(LabError):
    """A regression fit has no information (e.g. all-zero series)."""


class ConfigError(LabError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, message: str, issues: Optional[List[str]] = None):
        self.issues = issues or []
        if self.issues:
            message = message + "\n" + "\n".join(f"  - {issue}" for issue in self.issues)
        super().__init__(message)


class MissingPrerequisiteError(LabError):
    """A command needs files produced by another command first."""
