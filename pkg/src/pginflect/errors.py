"""Exception types shared across the package."""


class PGInflectError(Exception):
    """Base class for all package errors."""


class ParseError(PGInflectError):
    """Malformed input data. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(PGInflectError):
    """Semantically invalid data (empty training set, missing keys, ...)."""


class ConfigError(PGInflectError):
    """Invalid model or training configuration."""


class NumericError(PGInflectError):
    """Numeric failure during training or inference (non-finite loss, ...)."""


class CheckpointError(PGInflectError):
    """Unreadable or incompatible checkpoint file."""
