"""Exception types shared across the library.

Every error raised on a contract violation is one of these, so callers
(and the CLI exit-code mapping) can dispatch on type rather than message.
"""


class SohotError(Exception):
    """Base class for all library errors."""


class ArgumentError(SohotError, ValueError):
    """An argument violates a precondition (empty input, bad label, ...)."""


class ShapeError(SohotError, ValueError):
    """Operands have incompatible dimensions or orders."""


class CapacityError(SohotError, ValueError):
    """A requested computation exceeds the coefficient/memory budget."""


class StateError(SohotError, RuntimeError):
    """Operation invoked on an object in the wrong mode or state."""


class DivergenceError(SohotError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class ParseError(SohotError, ValueError):
    """A data file failed to parse."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDatasetError(SohotError, ValueError):
    """A data file contained no usable rows."""
