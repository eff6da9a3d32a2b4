"""hpix: satellite-to-map tile translation with a hierarchical two-stage GAN."""

from .errors import (
    ConfigError,
    DataError,
    HPixError,
    NumericError,
    ShapeError,
    SpecError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "HPixError",
    "NumericError",
    "ShapeError",
    "SpecError",
    "__version__",
]
