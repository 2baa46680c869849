"""Shared value types: boxes, class ids, cutouts and backgrounds.

Rasters are plain numpy arrays laid out row-major as (height, width[, channels]).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Raised when input data violates a precondition (bad dims, empty masks, ...)."""


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned box, half-open on the max edges."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DataError(f"degenerate box {self.as_tuple()}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def inside(self, width, height):
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def shifted(self, dx, dy):
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


@dataclass(frozen=True, order=True)
class ClassId:
    index: int
    name: str

    def __post_init__(self):
        if self.index < 0:
            raise DataError(f"class index must be non-negative, got {self.index}")


# Class order of the 31-class FOD vocabulary, as tabulated for the synthetic set.
FOD_CLASSES = (
    "Battery", "Bolt washer", "Bolt", "Clamp part", "Fuel cap", "Metal part",
    "Nut", "Plastic part", "Rock", "Washer", "Wire", "Wrench", "Cutter",
    "Label", "Luggage tag", "Nail", "Pliers", "Metal sheet", "Hose",
    "Adjustable clamp", "Adjustable wrench", "Bolt nut", "Hammer",
    "Luggage part", "Paint chip", "Pen", "Screw", "Screw driver", "Soda can",
    "Wood", "Tape",
)


def fod_vocabulary():
    return [ClassId(i, name) for i, name in enumerate(FOD_CLASSES)]


def mask_bbox(mask):
    """Tight half-open box (x0, y0, x1, y1) of the true pixels, or None if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


@dataclass(frozen=True, eq=False)
class Cutout:
    """Alpha-matted, tightly cropped object.

    ``rgba`` is an (h, w, 4) uint8 array; alpha is binary (0 or 255).
    """

    class_id: ClassId
    rgba: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        if self.rgba.ndim != 3 or self.rgba.shape[2] != 4 or self.rgba.dtype != np.uint8:
            raise DataError("cutout raster must be (h, w, 4) uint8")
        box = mask_bbox(self.alpha_mask)
        if box is None:
            raise DataError(f"cutout {self.source_id!r} has no opaque pixels")
        if box != (0, 0, self.width, self.height):
            raise DataError(f"cutout {self.source_id!r} is not tightly cropped: support {box}")

    @property
    def width(self):
        return self.rgba.shape[1]

    @property
    def height(self):
        return self.rgba.shape[0]

    @property
    def alpha_mask(self):
        return self.rgba[..., 3] > 0

    @property
    def area(self):
        return int(np.count_nonzero(self.alpha_mask))


@dataclass(frozen=True, eq=False)
class Background:
    rgb: np.ndarray
    source_id: str = ""
    tags: tuple = field(default=())

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.size == 0:
            raise DataError(f"background {self.source_id!r} must be a non-empty (h, w, 3) raster")

    @property
    def width(self):
        return self.rgb.shape[1]

    @property
    def height(self):
        return self.rgb.shape[0]
