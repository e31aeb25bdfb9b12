"""Exception hierarchy shared across the package."""


class ProtomixError(Exception):
    """Base class for all protomix errors."""


class DimensionError(ProtomixError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ProtomixError, ValueError):
    """A configuration value violates its contract."""


class ParseError(ProtomixError, ValueError):
    """A text input could not be parsed; carries a 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(ProtomixError, ValueError):
    """Loaded data violates a dataset invariant."""


class UsageError(ProtomixError, TypeError):
    """An operation was called in a way its contract forbids."""


class TrainingDivergedError(ProtomixError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, learning_rate: float):
        super().__init__(
            f"non-finite loss at iteration {iteration} (learning rate {learning_rate})"
        )
        self.iteration = iteration
        self.learning_rate = learning_rate
