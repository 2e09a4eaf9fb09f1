"""Exception hierarchy shared by every stage of the engine."""

from __future__ import annotations


class TraceSynthError(Exception):
    """Base class for all engine errors."""


class DomainError(TraceSynthError, ValueError):
    """A numeric input lies outside the domain of an operation."""


class UnitError(TraceSynthError, ValueError):
    """Activity and emission factor units do not line up."""


class InconsistencyError(TraceSynthError, ValueError):
    """Known factors cannot reproduce the supplied emissions."""


class ConfigError(TraceSynthError):
    """Missing or invalid configuration (GWP entries, rubric, run config)."""


class UsageError(TraceSynthError, ValueError):
    """An operation was called with arguments it cannot honour."""


class WrongPathError(TraceSynthError):
    """A pollutant was routed through the estimation path it does not use."""


class UnestimableError(TraceSynthError):
    """No observation, factor or pool is available to estimate a value."""


class ConservationError(TraceSynthError):
    """Mass was created or lost somewhere between inputs and outputs."""

    def __init__(self, message: str, failing_keys: list | None = None) -> None:
        super().__init__(message)
        self.failing_keys = list(failing_keys or [])


class InputValidationError(TraceSynthError):
    """One or more rows of an input table failed validation.

    ``problems`` holds ``(row_number, message)`` pairs, where row numbers are
    1-based file line numbers (the header is line 1).
    """

    def __init__(self, path: str, problems: list[tuple[int, str]]) -> None:
        self.path = path
        self.problems = list(problems)
        lines = "; ".join(f"row {row}: {msg}" for row, msg in self.problems)
        super().__init__(f"{path}: {lines}")
