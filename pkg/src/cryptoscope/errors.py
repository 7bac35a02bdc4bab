"""Exception hierarchy shared by every pipeline stage.

The CLI maps ``DataError`` subclasses to exit code 2 and ``UsageError`` to
exit code 1; anything else escaping a subcommand is treated as internal.
"""


class CryptoscopeError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(CryptoscopeError):
    pass


class DataError(CryptoscopeError):
    """Input data is malformed, missing, or unusable for the requested stage."""


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class MissingSample(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class DegenerateFeatures(DataError):
    pass


class InsufficientData(DataError):
    pass


class InsufficientBaselineFeatures(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class SplitMismatch(DataError):
    pass


class TooManyFeatures(DataError):
    pass


class EmptyInput(DataError):
    pass
