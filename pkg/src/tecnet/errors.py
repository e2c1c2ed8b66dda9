"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(ValueError):
    """A layer or model was built with inconsistent hyperparameters."""


class UsageError(ValueError):
    """An API was called in a way its contract forbids."""


class UndefinedMetricError(ValueError):
    """The requested metric has no defined value for these inputs."""


class TrainingDiverged(RuntimeError):
    """Training loss became NaN or infinite."""
