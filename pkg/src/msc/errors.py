"""Exception hierarchy shared by the whole pipeline.

CLI exit-code mapping: UsageError -> 1, DataError (and subclasses) -> 2,
NumericalError -> 3.
"""


class MscError(Exception):
    """Base class for all package errors."""


class UsageError(MscError):
    """Bad command-line arguments or malformed configuration."""


class DataError(MscError):
    """Invalid or inconsistent input data."""


class ParseError(DataError):
    """Malformed file; the message names the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyViewError(DataError):
    """View generation removed every point of a scene."""


class NoPositivePairsError(DataError):
    """A contrastive loss was requested with zero matched pairs."""


class NumericalError(MscError):
    """Numerical guard tripped (zero-norm feature rows, failed gradcheck)."""
