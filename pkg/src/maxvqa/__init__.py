"""Multi-axis, language-prompted video quality assessment."""

from .dimensions import AXIS_CODES, DimensionSpec, lookup, registry

__version__ = "0.1.0"
__all__ = ["AXIS_CODES", "DimensionSpec", "lookup", "registry"]
