"""Exception hierarchy shared by the engine.

DataError covers everything caused by bad input data (malformed files,
invariant violations, missing references); the CLI maps it to exit code 2.
Usage errors (bad flags, unknown config keys) are handled by the CLI itself
and map to exit code 1.
"""


class DataError(Exception):
    """Invalid input data."""


class FormatError(DataError):
    """Malformed file content. Carries the path and 1-based line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class ValidationError(DataError):
    """In-memory record violates a type invariant."""
