"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes (see `fgs.cli`): invalid input -> 2,
numerical degeneracy -> 3, I/O and format problems -> 4.
"""


class FgsError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(FgsError, ValueError):
    """Caller handed in something malformed (shape, range, or domain)."""


class InsufficientPointsError(InvalidInputError):
    """A sampling step needs more candidate points than are available."""


class EmptyInputError(InvalidInputError):
    """An aggregate was requested over an empty set (e.g. zero valid pixels)."""


class NumericalDegeneracyError(FgsError, ArithmeticError):
    """A computation hit a singular / non-finite configuration."""


class FormatError(FgsError, IOError):
    """A file did not match its declared binary or JSON layout."""
