"""Exception types raised across the toolkit."""

from __future__ import annotations


class SplitLawError(Exception):
    """Base class for all toolkit errors."""


class DomainError(SplitLawError, ValueError):
    """An argument lies outside the domain of a law or operation."""


class SingularityError(DomainError):
    """A law or derivative was evaluated at a singular point."""


class InputError(SplitLawError, ValueError):
    """Malformed user input (files, parameter documents, flags)."""


class ParseError(InputError):
    def __init__(self, row: int, column: str | None, reason: str):
        self.row = row
        self.column = column
        self.reason = reason
        where = f"row {row}" + (f", column {column!r}" if column else "")
        super().__init__(f"{where}: {reason}")


class EmptyInputError(InputError):
    pass


class EmbeddingFormatError(InputError):
    pass


class UnpairedIdsError(InputError):
    pass


class DimensionMismatchError(InputError):
    pass


class InvalidGridError(InputError):
    pass


class DegenerateError(SplitLawError):
    """The requested computation has no well-defined answer on this input."""


class ConvergenceError(SplitLawError):
    pass


class NonFiniteObjectiveError(ConvergenceError):
    pass


class AllChainsFailedError(ConvergenceError):
    pass
