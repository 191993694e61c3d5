class ApeError(Exception):
    """Base class for errors raised by this package."""


class SchemaMismatchError(ApeError, ValueError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class UnknownEntityError(ApeError, KeyError):
    def __init__(self, type_name, value):
        super().__init__(f"unknown entity {value!r} for type {type_name!r}")
        self.type_name = type_name
        self.value = value

    def __str__(self):
        return self.args[0]


class ParseError(ApeError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ModelFormatError(ApeError):
    """The model file cannot be read."""


class VersionMismatchError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class UndefinedMetricError(ApeError, ValueError):
    """A ranking metric was requested on single-class labels."""
