"""Exception types shared across the package."""


class MTKDError(Exception):
    """Base class for all package errors."""


class ShapeError(MTKDError, ValueError):
    pass


class ParameterError(MTKDError, ValueError):
    pass


class DegenerateInputError(MTKDError, ValueError):
    pass


class StateError(MTKDError, RuntimeError):
    pass


class LabelIndexError(MTKDError, IndexError):
    pass


class FormatError(MTKDError, ValueError):
    """Malformed file. ``offset`` is a byte offset (binary) or row number (text)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(MTKDError, ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line


class EmptyDatasetError(MTKDError, ValueError):
    pass
