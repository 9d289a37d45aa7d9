"""Exception hierarchy shared across the toolkit."""


class NdecError(Exception):
    """Base class for all toolkit errors."""


class InvalidSession(NdecError):
    """Session arrays violate a structural invariant."""


class InsufficientData(NdecError):
    """Not enough reaches (or samples) for the requested operation."""


class ConfigMismatch(NdecError):
    """Configuration fields are inconsistent with each other or the data."""


class NumericalFault(NdecError):
    """A non-finite value entered a numeric path."""


class DegenerateLabels(NdecError):
    """Labels carry no variance; the requested score is undefined."""


class TooShort(NdecError):
    """Signal shorter than the filter warm-up for the requested mode."""


class TrainingDiverged(NdecError):
    """Loss became non-finite during training. Carries the partial history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class FileFormatError(NdecError):
    """Base class for session/checkpoint file errors."""


class BadMagic(FileFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatch(FileFormatError):
    """File declares an unsupported format version."""


class TruncatedFile(FileFormatError):
    """File ended before the declared payload was read."""
