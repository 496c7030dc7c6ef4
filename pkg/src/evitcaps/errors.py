"""Exception taxonomy shared across the package."""


class EvitCapsError(Exception):
    """Base class for all package errors."""


class DimensionError(EvitCapsError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(EvitCapsError, ValueError):
    """A configuration value is invalid or inconsistent."""


class UsageError(EvitCapsError, ValueError):
    """An API was called outside its contract (e.g. backward on a non-scalar)."""


class DataError(EvitCapsError, ValueError):
    """Input data violates a documented precondition (labels out of range, ...)."""


class CheckpointError(EvitCapsError, ValueError):
    """A checkpoint file is malformed or inconsistent with the model."""


class TrainingError(EvitCapsError, RuntimeError):
    """Training aborted (non-finite loss or similar runtime failure)."""
