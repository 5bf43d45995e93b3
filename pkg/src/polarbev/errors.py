"""Exception types shared across the package."""

from __future__ import annotations


class PolarBEVError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PolarBEVError, ValueError):
    """Invalid configuration value (bad extents, kernel sizes, bounds...)."""


class DimensionError(PolarBEVError, ValueError):
    """Operand shapes are incompatible."""


class NumericalError(PolarBEVError, ArithmeticError):
    """A computation produced non-finite values."""


class TrainingError(PolarBEVError, RuntimeError):
    """Training diverged; ``step`` holds the offending step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ValidationError(PolarBEVError, ValueError):
    """Config or checkpoint contents do not validate; ``path`` names the field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
