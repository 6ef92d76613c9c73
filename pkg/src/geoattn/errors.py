"""Shared exception types with a stable CLI exit-code mapping."""


class ConfigError(ValueError):
    """Bad configuration: wrong shapes, invalid keys, incompatible settings."""


class DataError(ValueError):
    """Invalid molecular data (unknown element, malformed file, ...)."""


class ParseError(DataError):
    """Malformed text input; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UsageError(RuntimeError):
    """The caller used an interface out of order (e.g. no trace collected)."""
