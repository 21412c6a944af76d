"""Exception hierarchy shared by all modules."""


class MaxMinError(Exception):
    """Base class for all library errors."""


class ShapeError(MaxMinError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(MaxMinError, ValueError):
    """Invalid hyperparameter or layer configuration."""


class DataError(MaxMinError, RuntimeError):
    """Dataset file missing, malformed, or truncated."""


class WeightFileError(DataError):
    """Weight checkpoint corrupt or built for a different architecture."""


class LayerStateError(MaxMinError, RuntimeError):
    """Layer API misuse, e.g. backward called before forward."""


class DivergenceError(MaxMinError, RuntimeError):
    """Training produced a non-finite loss or gradient."""
