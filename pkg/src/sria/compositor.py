"""Paste transformed cutouts onto a background and derive their annotations.

Pasting is a direct overwrite of opaque pixels (no blending). Each placed
instance must keep at least ``trunc_floor`` of its pixels inside the frame,
and no earlier instance may end up with more than ``occlusion_cap`` of its
in-frame pixels covered by later pastes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, DataError, mask_bbox
from .transforms import AugmentParams, apply_params

log = logging.getLogger(__name__)

MAX_RETRIES = 20
MAX_INSTANCES = 6


class PlacementRejected(Exception):
    """A placement violated a constraint; the caller may retry elsewhere."""


class NoInstanceFits(DataError):
    """Every pick of an image exhausted its placement retries."""


@dataclass(frozen=True)
class Constraints:
    trunc_floor: float = 0.25
    occlusion_cap: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.trunc_floor <= 1.0:
            raise ValueError(f"truncation floor must be in (0, 1], got {self.trunc_floor}")
        if not 0.0 <= self.occlusion_cap < 1.0:
            raise ValueError(f"occlusion cap must be in [0, 1), got {self.occlusion_cap}")


@dataclass
class PlacedInstance:
    class_id: object
    offset: tuple
    transformed: object
    visible_fraction: float
    bbox: BoundingBox
    occluded_fraction: float = 0.0
    params: AugmentParams = field(default_factory=AugmentParams)
    source_id: str = ""


@dataclass
class AnnotatedImage:
    canvas: np.ndarray
    instances: list
    background_id: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)


def frame_window(canvas_shape, cutout_shape, offset):
    """Overlap of a cutout at ``offset`` with the canvas.

    Returns ``(canvas_slices, cutout_slices)`` or None when nothing overlaps.
    """
    H, W = canvas_shape[:2]
    h, w = cutout_shape[:2]
    x, y = offset
    cx0, cy0 = max(x, 0), max(y, 0)
    cx1, cy1 = min(x + w, W), min(y + h, H)
    if cx0 >= cx1 or cy0 >= cy1:
        return None
    canvas_sl = (slice(cy0, cy1), slice(cx0, cx1))
    cut_sl = (slice(cy0 - y, cy1 - y), slice(cx0 - x, cx1 - x))
    return canvas_sl, cut_sl


def in_frame_alpha(canvas_shape, cutout, offset):
    """Canvas-sized boolean mask of the cutout's opaque pixels that land in frame."""
    out = np.zeros(canvas_shape[:2], dtype=bool)
    win = frame_window(canvas_shape, cutout.rgba.shape, offset)
    if win is not None:
        canvas_sl, cut_sl = win
        out[canvas_sl] = cutout.alpha_mask[cut_sl]
    return out


def visible_fraction(canvas_shape, cutout, offset):
    win = frame_window(canvas_shape, cutout.rgba.shape, offset)
    if win is None:
        return 0.0
    inside = int(np.count_nonzero(cutout.alpha_mask[win[1]]))
    return inside / cutout.area


def derive_bbox(inst, canvas_shape):
    """Tight box over the instance's in-frame opaque pixels, occluded ones included."""
    win = frame_window(canvas_shape, inst.transformed.rgba.shape, inst.offset)
    if win is None:
        raise DataError("instance has no pixels inside the frame")
    canvas_sl, cut_sl = win
    box = mask_bbox(inst.transformed.alpha_mask[cut_sl])
    if box is None:
        raise DataError("instance has no pixels inside the frame")
    x0, y0, x1, y1 = box
    ox, oy = canvas_sl[1].start, canvas_sl[0].start
    return BoundingBox(x0 + ox, y0 + oy, x1 + ox, y1 + oy)


def _paste(canvas, cutout, offset):
    canvas_sl, cut_sl = frame_window(canvas.shape, cutout.rgba.shape, offset)
    alpha = cutout.alpha_mask[cut_sl]
    region = canvas[canvas_sl]
    region[alpha] = cutout.rgba[cut_sl][..., :3][alpha]
    return canvas_sl, alpha


def place(canvas, cutout, offset, trunc_floor=0.25, params=None):
    """Overwrite ``canvas`` with the opaque pixels of ``cutout`` at ``offset``.

    Raises ``PlacementRejected`` (canvas untouched) when less than
    ``trunc_floor`` of the cutout stays inside the frame.
    """
    if not 0.0 < trunc_floor <= 1.0:
        raise ValueError(f"truncation floor must be in (0, 1], got {trunc_floor}")
    offset = (int(offset[0]), int(offset[1]))
    frac = visible_fraction(canvas.shape, cutout, offset)
    if frac < trunc_floor:
        raise PlacementRejected(f"visible fraction {frac:.4f} below floor {trunc_floor}")
    _paste(canvas, cutout, offset)
    inst = PlacedInstance(cutout.class_id, offset, cutout, frac, None,
                          params=params or AugmentParams(), source_id=cutout.source_id)
    inst.bbox = derive_bbox(inst, canvas.shape)
    return inst


def occlusion_of(earlier, later, canvas_shape):
    """Fraction of ``earlier``'s in-frame pixels covered by any instance in ``later``."""
    own = in_frame_alpha(canvas_shape, earlier.transformed, earlier.offset)
    total = int(np.count_nonzero(own))
    if total == 0 or not later:
        return 0.0
    cover = np.zeros_like(own)
    for inst in later:
        cover |= in_frame_alpha(canvas_shape, inst.transformed, inst.offset)
    return int(np.count_nonzero(own & cover)) / total


def sample_offset(rng, canvas_shape, cutout_shape, trunc_floor):
    """Uniform integer top-left offset over positions where the cutout's box could keep
    ``trunc_floor`` of its extent in frame along each axis."""
    H, W = canvas_shape[:2]
    h, w = cutout_shape[:2]
    lo_x, hi_x = math.floor(-(1.0 - trunc_floor) * w), W - math.ceil(trunc_floor * w)
    lo_y, hi_y = math.floor(-(1.0 - trunc_floor) * h), H - math.ceil(trunc_floor * h)
    x = int(rng.integers(lo_x, max(lo_x, hi_x) + 1))
    y = int(rng.integers(lo_y, max(lo_y, hi_y) + 1))
    return x, y


class _Scene:
    """Canvas plus a per-pixel owner map used to audit occlusion incrementally."""

    def __init__(self, background, constraints):
        self.canvas = background.copy()
        self.owner = np.full(background.shape[:2], -1, dtype=np.int16)
        self.constraints = constraints
        self.instances = []
        self.in_frame = []
        self.remaining = []

    def try_place(self, cutout, offset, params):
        shape = self.canvas.shape
        frac = visible_fraction(shape, cutout, offset)
        if frac < self.constraints.trunc_floor:
            return None
        canvas_sl, cut_sl = frame_window(shape, cutout.rgba.shape, offset)
        alpha = cutout.alpha_mask[cut_sl]
        covered = self.owner[canvas_sl][alpha]
        covered = covered[covered >= 0]
        if covered.size:
            lost = np.bincount(covered, minlength=len(self.instances))
            for k, n in enumerate(lost):
                covered_after = self.in_frame[k] - self.remaining[k] + n
                if n and covered_after / self.in_frame[k] > self.constraints.occlusion_cap:
                    return None
        else:
            lost = np.zeros(len(self.instances), dtype=np.intp)

        inst = place(self.canvas, cutout, offset, self.constraints.trunc_floor, params)
        k = len(self.instances)
        self.owner[canvas_sl][alpha] = k
        n_in = int(np.count_nonzero(alpha))
        for j, n in enumerate(lost):
            if n:
                self.remaining[j] -= int(n)
                prev = self.instances[j]
                prev.occluded_fraction = (self.in_frame[j] - self.remaining[j]) / self.in_frame[j]
        self.instances.append(inst)
        self.in_frame.append(n_in)
        self.remaining.append(n_in)
        return inst


def synthesize_image(bg, picks, constraints=Constraints(), rng=None, max_retries=MAX_RETRIES, seed=0):
    """Composite up to six picks onto ``bg`` in order.

    ``picks`` holds ``(cutout, params, offset)`` triples; ``offset`` may be None
    to sample one. A pick that cannot be placed within ``max_retries`` extra
    offset draws is dropped. Raises ``NoInstanceFits`` if every pick is dropped.
    """
    if not 1 <= len(picks) <= MAX_INSTANCES:
        raise ValueError(f"an image takes 1..{MAX_INSTANCES} picks, got {len(picks)}")
    if rng is None:
        rng = np.random.default_rng(seed)
    scene = _Scene(bg.rgb, constraints)
    for cutout, params, offset in picks:
        params = params or AugmentParams()
        try:
            cut = apply_params(cutout, params)
        except DataError as exc:
            log.debug("dropping pick %s: %s", cutout.source_id, exc)
            continue
        for attempt in range(max_retries + 1):
            if offset is None or attempt > 0:
                pos = sample_offset(rng, bg.rgb.shape, cut.rgba.shape, constraints.trunc_floor)
            else:
                pos = (int(offset[0]), int(offset[1]))
            if scene.try_place(cut, pos, params) is not None:
                break
        else:
            log.debug("dropping pick %s after %d retries", cutout.source_id, max_retries)
    if not scene.instances:
        raise NoInstanceFits("no instance could be placed within the constraints")
    return AnnotatedImage(scene.canvas, scene.instances, bg.source_id, seed)
