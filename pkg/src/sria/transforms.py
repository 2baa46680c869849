"""Geometric cutout augmentations: in-plane rotation, uniform scale, perspective tilt.

All warps use inverse mapping with alpha-premultiplied bilinear sampling, so
colour never bleeds in from transparent pixels. Alpha is re-binarised at 0.5
and the result is cropped back to its tight support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Cutout, DataError, mask_bbox

ALPHA_CUT = 0.5


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling bounds for the geometric augmentations."""

    rotation: tuple = (-45.0, 45.0)
    scale: tuple = (0.25, 0.6)
    tilt_max: float = 0.001

    def __post_init__(self):
        lo, hi = self.rotation
        if not -180.0 <= lo <= hi <= 180.0:
            raise ValueError(f"bad rotation range {self.rotation}")
        lo, hi = self.scale
        if not 0.0 < lo <= hi:
            raise ValueError(f"bad scale range {self.scale}")
        if not 0.0 <= self.tilt_max <= 0.05:
            raise ValueError(f"tilt_max must be in [0, 0.05], got {self.tilt_max}")


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    scale: float = 1.0
    perspective_tilt: float = 0.0
    flip_h: bool = False

    def __post_init__(self):
        if not abs(self.rotation_deg) <= 180.0:
            raise ValueError(f"rotation must be within +-180 deg, got {self.rotation_deg}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.perspective_tilt <= 0.05:
            raise ValueError(f"perspective tilt must be in [0, 0.05], got {self.perspective_tilt}")

    @property
    def is_identity(self):
        return (self.rotation_deg == 0.0 and self.scale == 1.0
                and self.perspective_tilt == 0.0 and not self.flip_h)

    def within(self, ranges):
        """True if every non-identity value lies inside ``ranges``."""
        ok = True
        if self.rotation_deg != 0.0:
            ok &= ranges.rotation[0] <= self.rotation_deg <= ranges.rotation[1]
        if self.scale != 1.0:
            ok &= ranges.scale[0] <= self.scale <= ranges.scale[1]
        ok &= self.perspective_tilt <= ranges.tilt_max
        return bool(ok)

    def to_dict(self):
        return {"rotation_deg": self.rotation_deg, "scale": self.scale,
                "perspective_tilt": self.perspective_tilt, "flip_h": self.flip_h}


def _with_rgba(c, rgba):
    return Cutout(c.class_id, rgba, c.source_id)


def _crop_tight(rgba, source_id=""):
    box = mask_bbox(rgba[..., 3] > 0)
    if box is None:
        raise DataError(f"cutout {source_id!r} vanished during resampling")
    x0, y0, x1, y1 = box
    return np.ascontiguousarray(rgba[y0:y1, x0:x1])


def _sample(rgba, sx, sy):
    """Bilinearly sample ``rgba`` at pixel-index coordinates ``(sx, sy)``.

    Samples outside the raster read a transparent border. Returns a binarised
    uint8 RGBA raster shaped like ``sx``.
    """
    h, w = rgba.shape[:2]
    alpha = rgba[..., 3].astype(np.float64) / 255.0
    padded = np.zeros((h + 2, w + 2, 4))
    padded[1:-1, 1:-1, :3] = rgba[..., :3] * alpha[..., None]
    padded[1:-1, 1:-1, 3] = alpha

    px = np.clip(sx + 1.0, 0.0, w + 1.0)
    py = np.clip(sy + 1.0, 0.0, h + 1.0)
    x0 = np.clip(np.floor(px).astype(np.intp), 0, w)
    y0 = np.clip(np.floor(py).astype(np.intp), 0, h)
    fx = (px - x0)[..., None]
    fy = (py - y0)[..., None]
    top = padded[y0, x0] * (1 - fx) + padded[y0, x0 + 1] * fx
    bottom = padded[y0 + 1, x0] * (1 - fx) + padded[y0 + 1, x0 + 1] * fx
    out = top * (1 - fy) + bottom * fy

    a = out[..., 3]
    opaque = a >= ALPHA_CUT
    result = np.zeros(sx.shape + (4,), dtype=np.uint8)
    color = out[..., :3] / np.where(a > 0, a, 1.0)[..., None]
    result[..., :3] = np.where(opaque[..., None], np.clip(np.rint(color), 0, 255), 0)
    result[..., 3] = np.where(opaque, 255, 0)
    return result


def _grid(out_w, out_h):
    v, u = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    return u + 0.5, v + 0.5


def rotate_cutout(c, deg):
    """Rotate counter-clockwise (as displayed) by ``deg`` degrees about the cutout centre."""
    if not abs(deg) <= 180.0:
        raise ValueError(f"rotation must be within +-180 deg, got {deg}")
    if deg == 0.0:
        return c
    quarter = deg / 90.0
    if quarter == int(quarter):
        return _with_rgba(c, np.ascontiguousarray(np.rot90(c.rgba, int(quarter) % 4)))

    theta = math.radians(deg)
    cos, sin = math.cos(theta), math.sin(theta)
    w, h = c.width, c.height
    out_w = math.ceil(w * abs(cos) + h * abs(sin)) + 2
    out_h = math.ceil(w * abs(sin) + h * abs(cos)) + 2
    # same parity as the source keeps the rotation centre on the pixel lattice
    out_w += (out_w - w) % 2
    out_h += (out_h - h) % 2
    X, Y = _grid(out_w, out_h)
    dx, dy = X - out_w / 2.0, Y - out_h / 2.0
    src_x = w / 2.0 + dx * cos - dy * sin
    src_y = h / 2.0 + dx * sin + dy * cos
    rgba = _sample(c.rgba, src_x - 0.5, src_y - 0.5)
    return _with_rgba(c, _crop_tight(rgba, c.source_id))


def scaled_size(w, h, s):
    return math.floor(s * w + 0.5), math.floor(s * h + 0.5)


def scale_cutout(c, s):
    """Resize by factor ``s`` to round(s*w) x round(s*h), bilinear."""
    if not s > 0:
        raise ValueError(f"scale must be positive, got {s}")
    if s == 1.0:
        return c
    out_w, out_h = scaled_size(c.width, c.height, s)
    if out_w < 1 or out_h < 1:
        raise DataError(f"scaling {c.width}x{c.height} by {s} leaves less than one pixel")
    X, Y = _grid(out_w, out_h)
    rgba = _sample(c.rgba, X * (c.width / out_w) - 0.5, Y * (c.height / out_h) - 0.5)
    return _with_rgba(c, _crop_tight(rgba, c.source_id))


def homography(src, dst):
    """3x3 matrix mapping four ``src`` points onto four ``dst`` points."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    p = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(p, 1.0).reshape(3, 3)


def perspective_warp(c, tilt):
    """Pull both top corners inward by ``tilt * width``, a small out-of-plane tip."""
    if not 0.0 <= tilt <= 0.05:
        raise ValueError(f"tilt must be in [0, 0.05], got {tilt}")
    if tilt == 0.0:
        return c
    w, h = c.width, c.height
    shift = tilt * w
    src = [(0, 0), (w, 0), (w, h), (0, h)]
    dst = [(shift, 0), (w - shift, 0), (w, h), (0, h)]
    inv = np.linalg.inv(homography(src, dst))
    X, Y = _grid(w, h)
    den = inv[2, 0] * X + inv[2, 1] * Y + inv[2, 2]
    src_x = (inv[0, 0] * X + inv[0, 1] * Y + inv[0, 2]) / den
    src_y = (inv[1, 0] * X + inv[1, 1] * Y + inv[1, 2]) / den
    rgba = _sample(c.rgba, src_x - 0.5, src_y - 0.5)
    return _with_rgba(c, _crop_tight(rgba, c.source_id))


def flip_cutout(c):
    return _with_rgba(c, np.ascontiguousarray(c.rgba[:, ::-1]))


def apply_params(c, params):
    """Flip, scale, rotate, then tilt."""
    if params.flip_h:
        c = flip_cutout(c)
    c = scale_cutout(c, params.scale)
    c = rotate_cutout(c, params.rotation_deg)
    return perspective_warp(c, params.perspective_tilt)
