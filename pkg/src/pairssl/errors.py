"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A forward computation produced NaN or Inf."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown or out of range."""


class DataFormatError(ValueError):
    """An on-disk dataset or checkpoint does not match its documented layout."""
