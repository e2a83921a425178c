"""Exception hierarchy shared by the toolchain.

Every error carries the process exit code the CLI reports for it.
"""

from __future__ import annotations


class RecountError(Exception):
    """Base class for all toolchain errors."""

    exit_code = 1


class InputError(RecountError):
    """Malformed input, out-of-range parameter or unreadable path."""

    exit_code = 2


class DomainError(InputError):
    """A value lies outside its allowed domain (e.g. a non half-star rating)."""


class ParseError(InputError):
    """A record could not be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotFoundError(InputError):
    """Unknown user."""


class InsufficientDataError(RecountError):
    """Not enough points to fit or evaluate."""

    exit_code = 3


class UndefinedInputError(InsufficientDataError):
    """An input is empty where a normalisation needs mass."""


class UndefinedMetricError(InsufficientDataError):
    """No eligible users to average a metric over."""


class InconsistencyError(InsufficientDataError):
    """Derived counts went negative."""


class InfeasibleError(RecountError):
    """The error budget cannot be met (n_cr <= p_b)."""

    exit_code = 4
