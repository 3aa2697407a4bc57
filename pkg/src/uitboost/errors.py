"""Exception types shared across the package."""


class UitboostError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(UitboostError):
    """Header/schema mismatch or inconsistent row arity."""


class UnknownLabelError(UitboostError):
    """Label cell holds a value outside the accepted label vocabulary."""


class MissingValueError(UitboostError):
    """A cell is empty; ingestion rejects missing data outright."""


class NumericParseError(UitboostError):
    """A cell declared numeric could not be parsed as a float."""


class EmptyReportError(UitboostError):
    """A report with no entries was asked to render."""


class ExperimentError(UitboostError):
    """A repetition of a repeated experiment failed."""


class BalanceWarning(UserWarning):
    """Balanced sampling could not downsample: majority class is smaller."""
