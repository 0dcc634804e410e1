"""Exception types shared across the package."""


class SdosError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SdosError, ValueError):
    """Array shapes do not agree."""


class NotPositiveDefinite(SdosError, ValueError):
    """A Cholesky factorization met a non-positive or non-finite pivot."""


class ConstraintViolation(SdosError, ValueError):
    """A constrained value lies on or outside the boundary of its support."""


class NonFiniteValue(SdosError, FloatingPointError):
    """A density or gradient evaluated to NaN or an infinity."""


class CurvatureFailure(SdosError, ArithmeticError):
    """The negative Hessian could not be made positive-definite."""


class ParseError(SdosError, ValueError):
    """A dataset file could not be parsed.

    Attributes:
        row: 1-based line number in the file (the header is line 1).
        column: 1-based column number, or None for row-level problems.
    """

    def __init__(self, message: str, row: int, column: int | None = None):
        where = f"row {row}" if column is None else f"row {row}, column {column}"
        super().__init__(f"{where}: {message}")
        self.row = row
        self.column = column


class EmptyDataset(SdosError, ValueError):
    """A dataset file has a header but no data rows."""


class AllRepetitionsFailed(SdosError, RuntimeError):
    """Every repetition of a diagnostic run failed."""
