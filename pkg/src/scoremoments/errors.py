"""Exception hierarchy; exit codes mirror the CLI contract."""


class ScoreMomentsError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ValidationError(ScoreMomentsError):
    """Bad arguments, shapes, configs, or file contents."""

    exit_code = 2


class ShapeError(ValidationError):
    """Dimension mismatch between operands."""


class SizeLimitError(ValidationError):
    """A requested tensor would exceed the element budget."""


class UnsupportedVariantError(ValidationError):
    """Operation not defined for this model variant or method."""


class TensorFormatError(ValidationError):
    """Malformed tensor file (wrong magic, truncated, or trailing bytes)."""


class NumericError(ScoreMomentsError):
    """Numeric failures: degeneracy, breakdowns, rank deficiency."""

    exit_code = 3


class DegeneratePointError(NumericError):
    """Density underflow at an evaluation point; score undefined there."""

    def __init__(self, message, row_index=None):
        super().__init__(message)
        self.row_index = row_index


class NonFiniteError(NumericError):
    """A NaN or Inf appeared where a finite value is required."""


class BreakdownError(NumericError):
    """Power iteration hit a zero contraction (degenerate start)."""


class RankDeficiencyError(NumericError):
    """Moment matrix rank is below the requested number of components."""


class FitError(NumericError):
    """Weight re-estimation failed (all samples degenerate)."""


class PartialResultError(NumericError):
    """Decomposition found fewer components than requested.

    The partial result is attached as ``.result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# Exit code used by CLI commands whose statistical gate failed.
GATE_EXIT_CODE = 4
