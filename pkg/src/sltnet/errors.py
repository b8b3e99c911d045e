"""Exception types shared across the package."""


class SltnetError(Exception):
    """Base class for all package errors."""


class ArgumentError(SltnetError, ValueError):
    """An argument is outside its valid domain (bad shape, bad geometry, ...)."""


class ValidationError(SltnetError, ValueError):
    """Data violates an invariant (out-of-bounds event, non-binary spikes, ...)."""


class ConfigError(ValidationError):
    """A configuration is inconsistent or contains unknown keys."""


class FormatError(SltnetError):
    """A file does not carry the expected magic or version."""


class CorruptionError(FormatError):
    """A file is truncated or internally inconsistent."""


class StateError(SltnetError, RuntimeError):
    """An operation was called in the wrong lifecycle state."""
