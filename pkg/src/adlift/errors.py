"""Exception types shared across the pipeline."""

from __future__ import annotations


class AdliftError(Exception):
    """Base class for all package errors."""


class DataError(AdliftError, ValueError):
    """Input data violates a format or domain rule."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class GapError(DataError):
    """Visit timestamps are not contiguous minutes."""

    def __init__(self, missing, row: int | None = None):
        self.missing = missing
        super().__init__(f"missing minute {missing.isoformat()}", row=row)


class RangeError(DataError):
    """An ad falls outside the span of the visit series."""


class DomainError(AdliftError, ValueError):
    """A numeric argument lies outside the domain of a function."""


class ConfigError(AdliftError):
    """Run configuration is invalid."""


class NumericalError(AdliftError):
    """An estimation step produced a non-finite or unusable result."""
