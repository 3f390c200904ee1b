"""Exception hierarchy shared across the package."""


class DprsaError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DprsaError, ValueError):
    """Non-finite values, mismatched dimensions, or out-of-domain arguments."""


class OutOfRangeError(InvalidInputError):
    """A privacy budget outside the range a calibration is valid for."""


class ConvergenceError(DprsaError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The last iterate is kept on ``last_iterate`` so callers can still inspect it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ConfigError(DprsaError, ValueError):
    """A run configuration violates the schema or an invariant."""


class DatasetError(DprsaError):
    """Base class for dataset ingestion failures."""


class BadMagicError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class TruncatedFileError(CountMismatchError):
    """Fewer bytes than the header promises."""
