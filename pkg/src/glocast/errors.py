"""Exception types shared across the package."""


class GlocastError(Exception):
    """Base class for all package errors."""


class ConfigError(GlocastError):
    """Invalid configuration key, value, or combination."""


class DataError(GlocastError):
    """Malformed or unreadable input data."""


class TrainingDivergedError(GlocastError):
    """Training loss became non-finite."""


class CheckpointError(GlocastError):
    """Unreadable or mismatched checkpoint file."""
