"""Exception hierarchy shared by every cxseis module."""


class CxseisError(Exception):
    """Base class for all library errors."""


class ShapeError(CxseisError, ValueError):
    """Array or tensor shapes do not satisfy an operation's contract."""


class NumericError(CxseisError, ArithmeticError):
    """Non-finite values or a numerically invalid state."""


class ConditioningError(NumericError):
    """A matrix that must be positive definite is not."""


class DivergenceError(NumericError):
    """Training diverged; carries the last good model and the log so far."""

    def __init__(self, message, model=None, log=None):
        super().__init__(message)
        self.model = model
        self.log = log


class GraphError(CxseisError, RuntimeError):
    """The autodiff graph is malformed (unknown node, cycle, non-scalar loss)."""


class FormatError(CxseisError, ValueError):
    """A file does not follow the expected binary layout."""


class ConfigError(CxseisError, ValueError):
    """An experiment configuration is invalid."""
