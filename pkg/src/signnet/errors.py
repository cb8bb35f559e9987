"""Exception types raised across the package."""


class SignNetError(Exception):
    """Base class for all package errors."""


class ShapeError(SignNetError, ValueError):
    """An operand has the wrong extent along some dimension."""

    def __init__(self, message, dimension=None):
        super().__init__(message)
        self.dimension = dimension


class ConfigError(SignNetError, ValueError):
    """Invalid layer geometry, hyperparameter or network description."""


class LabelError(SignNetError, ValueError):
    """A class id lies outside the classifier's range."""


class StatisticsError(SignNetError, RuntimeError):
    """Batch-norm inference requested before any statistics were recorded."""


class NonFiniteGradientError(SignNetError, FloatingPointError):
    """A gradient contained NaN or Inf."""

    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class DataError(SignNetError, IOError):
    """A dataset file is missing, corrupt or malformed."""


class CheckpointError(SignNetError, IOError):
    """A checkpoint is unreadable or belongs to a different network."""
