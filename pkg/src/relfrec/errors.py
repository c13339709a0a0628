"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: DataError -> 2,
NumericDivergenceError -> 3, UnknownIdError -> 4.
"""


class RelfrecError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RelfrecError):
    """Unreadable, malformed, or empty input data."""


class EmptyJoinError(DataError):
    """Joining ratings with item metadata left nothing."""


class NumericDivergenceError(RelfrecError):
    """Embedding training produced NaN or Inf values."""


class UnknownIdError(RelfrecError):
    """An id was not found where the contract requires it to exist."""
