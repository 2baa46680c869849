"""Cut-paste synthetic dataset generation and detection evaluation."""

from .core import BoundingBox, ClassId, Cutout, Background, DataError, FOD_CLASSES

__version__ = "0.1.0"
__all__ = ["BoundingBox", "ClassId", "Cutout", "Background", "DataError", "FOD_CLASSES"]
