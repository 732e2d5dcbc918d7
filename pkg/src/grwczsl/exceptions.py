class GRWError(Exception):
    """Base class for all package errors."""


class ShapeError(GRWError, ValueError):
    pass


class InvalidInputError(GRWError, ValueError):
    pass


class ConfigError(GRWError, ValueError):
    """A configuration value violates its constraints."""


class StateError(GRWError, RuntimeError):
    """An object was used before it reached the required state."""


class InsufficientClassesError(GRWError, ValueError):
    pass


class InvalidLabelError(GRWError, ValueError):
    pass


class DataParseError(GRWError, ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class NumericError(GRWError, FloatingPointError):
    """A NaN or Inf appeared during training."""
