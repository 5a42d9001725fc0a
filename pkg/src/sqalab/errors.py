"""Exception types shared across the package."""


class SqaError(Exception):
    """Base class for all sqalab errors."""


class InvalidInput(SqaError, ValueError):
    """An argument violates an operation's precondition."""


class DegenerateInput(InvalidInput):
    """Input is technically valid but statistically degenerate (e.g. zero variance)."""


class AudioFormatError(SqaError):
    """A file is not a readable RIFF/WAVE container or uses an unsupported codec."""


class ProviderError(SqaError):
    """An external labeling command failed or produced unparsable output."""


class CheckpointError(SqaError):
    """A checkpoint file is corrupt, truncated, or of an incompatible version."""


class ConfigError(SqaError):
    """A run configuration is inconsistent or references missing paths."""
