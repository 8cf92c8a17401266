"""Custom exceptions for the DSEE toolkit."""


class DSEEError(Exception):
    """Base exception for all toolkit errors."""
    pass


class ShapeError(DSEEError):
    """Raised when matrix or tensor dimensions do not match."""
    pass


class ParameterError(DSEEError):
    """Raised when an argument is out of range or an unknown tag is given."""
    pass


class InputError(DSEEError):
    """Raised when input data is invalid (non-finite entries, token ids out of range)."""
    pass


class DegenerateInputError(DSEEError):
    """Raised when a column becomes numerically zero during orthonormalization."""
    pass


class ConfigurationError(DSEEError):
    """Raised when a configuration file is missing or invalid."""
    pass


class TrainingError(DSEEError):
    """Raised when optimization produces non-finite gradients or losses."""
    pass


class PipelineError(DSEEError):
    """Raised when a pipeline stage fails or an invariant is violated."""
    pass


class ArchiveError(DSEEError):
    """Base exception for tensor-archive errors."""
    pass


class ArchiveFormatError(ArchiveError):
    """Raised on bad magic bytes, unsupported version or unknown dtype."""
    pass


class ArchiveCorruptionError(ArchiveError):
    """Raised when header length, offsets or tensor lengths are inconsistent."""
    pass


class ArchiveTruncatedError(ArchiveError):
    """Raised when the file ends before the data its header describes."""
    pass


class UsageError(DSEEError):
    """Raised when command-line arguments are malformed."""
    pass
