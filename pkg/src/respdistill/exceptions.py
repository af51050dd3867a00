"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map it directly.
"""


class RespDistillError(Exception):
    exit_code = 1


class DomainError(RespDistillError, ValueError):
    """Numerical precondition violated (shape mismatch, non-finite input...)."""

    exit_code = 2


class ConfigError(RespDistillError, ValueError):
    exit_code = 2


class DataError(RespDistillError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class StorageError(RespDistillError, OSError):
    exit_code = 4
