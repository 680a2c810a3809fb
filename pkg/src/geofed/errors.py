"""Exception types shared across the package."""


class GeofedError(Exception):
    """Base class for all package errors."""


class ConfigError(GeofedError):
    """Invalid configuration, spec, or CLI usage (exit code 2)."""


class DataValidationError(GeofedError):
    """Input data violates a precondition (exit code 3)."""


class FormatError(GeofedError):
    """Malformed container file (exit code 3); carries the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
