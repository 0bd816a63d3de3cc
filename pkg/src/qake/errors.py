"""Exception types shared across the toolkit."""


class QakeError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(QakeError, ValueError):
    """Operand lengths or shapes are inconsistent."""


class ConfigError(QakeError, ValueError):
    """A parameter is outside its allowed domain."""


class ParseError(QakeError, ValueError):
    """A serialized input could not be decoded.

    Carries the offending line number when parsing line-oriented files.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
