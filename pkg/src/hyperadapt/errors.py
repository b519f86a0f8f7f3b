"""Package-wide exception types.

Shape/format/data problems are value errors; numerical failures (solver
non-convergence, non-finite losses) get their own class so callers can map
them to a distinct exit code.
"""


class ShapeError(ValueError):
    """Array extents are inconsistent with what an operation requires."""


class FormatError(ValueError):
    """A binary file is malformed: bad magic, bad header, or truncated."""


class DataError(ValueError):
    """Sample data is invalid, e.g. a class label out of range."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed: no convergence, non-finite loss."""


class UnsupportedKindError(ValueError):
    """An operation was asked to handle a decomposition kind it does not support."""


class UsageError(ValueError):
    """Bad command-line or configuration input."""
