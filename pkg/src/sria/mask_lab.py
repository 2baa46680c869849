"""Classical segmentation baseline, mask scoring and box-supervised mask losses.

Everything here is a pure function on small numpy rasters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from PIL import Image

from .core import BoundingBox, DataError

DICE_EPS = 1e-6
_LOG_FLOOR = 1e-12


class OtsuResult(NamedTuple):
    threshold: int
    mask: np.ndarray
    degenerate: bool


def otsu_threshold(img):
    """Otsu's threshold over the 256-bin histogram of an 8-bit image.

    The foreground is ``img > threshold``. Between-class variance is compared
    exactly in integer arithmetic so ties resolve to the smallest threshold.
    A constant image yields ``threshold = its value``, an empty mask and
    ``degenerate=True``.
    """
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise DataError("otsu_threshold expects a non-empty 2-D gray image")
    if img.dtype != np.uint8:
        raise DataError(f"otsu_threshold expects uint8 data, got {img.dtype}")
    hist = np.bincount(img.ravel(), minlength=256)
    levels = np.flatnonzero(hist)
    if levels.size == 1:
        t = int(levels[0])
        return OtsuResult(t, np.zeros(img.shape, dtype=bool), True)

    total_n = int(img.size)
    total_s = int(np.dot(hist, np.arange(256)))
    best_t, best_num, best_den = 0, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += int(hist[t])
        s0 += t * int(hist[t])
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * N^2 = (s0*n1 - s1*n0)^2 / (n0*n1)
        num = (s0 * n1 - (total_s - s0) * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return OtsuResult(best_t, img > best_t, False)


def dice(a, b):
    """Sorensen-Dice coefficient 2|X∩Y| / (|X|+|Y|); 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DataError(f"mask shapes differ: {a.shape} vs {b.shape}")
    size = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if size == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / size


def box_indicator(box, shape):
    h, w = shape
    out = np.zeros((h, w))
    out[int(box.y_min):int(box.y_max), int(box.x_min):int(box.x_max)] = 1.0
    return out


def _soft_dice_loss(a, b, eps=DICE_EPS):
    num = 2.0 * np.dot(a, b) + eps
    den = np.dot(a, a) + np.dot(b, b) + eps
    loss = 1.0 - num / den
    grad_a = -(2.0 * b * den - num * 2.0 * a) / den**2
    return loss, grad_a


def _check_soft(pred):
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 2:
        raise DataError("soft mask must be 2-D")
    if pred.size and (pred.min() < 0.0 or pred.max() > 1.0):
        raise DataError("soft mask values must lie in [0, 1]")
    return pred


def projection_loss(pred, box, eps=DICE_EPS, return_grad=False):
    """Sum of soft-Dice losses between the max-projections of ``pred`` and of ``box``.

    Soft-Dice uses squared norms in the denominator, ``eps`` is added to both
    numerator and denominator. With ``return_grad`` the analytic gradient with
    respect to ``pred`` is returned too (routed to the first arg-max of each
    projection).
    """
    pred = _check_soft(pred)
    h, w = pred.shape
    if not isinstance(box, BoundingBox):
        box = BoundingBox(*box)
    if not box.inside(w, h):
        raise DataError(f"box {box.as_tuple()} outside {w}x{h} mask")
    target = box_indicator(box, pred.shape)

    proj_x, proj_y = pred.max(axis=0), pred.max(axis=1)
    loss_x, g_x = _soft_dice_loss(proj_x, target.max(axis=0), eps)
    loss_y, g_y = _soft_dice_loss(proj_y, target.max(axis=1), eps)
    loss = float(loss_x + loss_y)
    if not return_grad:
        return loss
    grad = np.zeros_like(pred)
    cols = np.arange(w)
    grad[pred.argmax(axis=0), cols] += g_x
    rows = np.arange(h)
    grad[rows, pred.argmax(axis=1)] += g_y
    return loss, grad


@dataclass(frozen=True)
class PairwiseLossConfig:
    tau: float = 0.3
    dilation: int = 2
    sigma: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if int(self.dilation) != self.dilation or self.dilation < 1:
            raise ValueError(f"dilation must be a positive integer, got {self.dilation}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


# One representative per undirected 8-neighbourhood direction.
_DIRECTIONS = ((0, 1), (1, 0), (1, 1), (1, -1))


def pairwise_edges(shape, dilation):
    """All undirected pixel pairs ((r0, c0), (r1, c1)) at offsets k*d, 1 <= k <= dilation.

    Returned as flat-index arrays ``(i, j)``.
    """
    h, w = shape
    idx = np.arange(h * w).reshape(h, w)
    src, dst = [], []
    for dr, dc in _DIRECTIONS:
        for k in range(1, dilation + 1):
            r, c = dr * k, dc * k
            r0, r1 = 0, h - r
            c0, c1 = max(0, -c), min(w, w - c)
            if r1 <= r0 or c1 <= c0:
                continue
            src.append(idx[r0:r1, c0:c1].ravel())
            dst.append(idx[r0 + r:r1 + r, c0 + c:c1 + c].ravel())
    if not src:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    return np.concatenate(src), np.concatenate(dst)


def color_similarity(img, i, j, sigma):
    img = np.asarray(img, dtype=np.float64)
    flat = img.reshape(img.shape[0] * img.shape[1], -1)
    dist = np.linalg.norm(flat[i] - flat[j], axis=1)
    return np.exp(-dist / sigma)


def pairwise_loss(img, pred, cfg=PairwiseLossConfig(), return_grad=False):
    """Mean of -log P(same label) over neighbour pairs whose colour similarity >= tau.

    P(same) = p_i p_j + (1 - p_i)(1 - p_j). Returns 0 when no pair qualifies.
    """
    pred = _check_soft(pred)
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[:2] != pred.shape:
        raise DataError(f"image {img.shape[:2]} and mask {pred.shape} differ in size")
    i, j = pairwise_edges(pred.shape, cfg.dilation)
    keep = color_similarity(img, i, j, cfg.sigma) >= cfg.tau
    i, j = i[keep], j[keep]
    grad = np.zeros_like(pred)
    if i.size == 0:
        return (0.0, grad) if return_grad else 0.0

    p = pred.ravel()
    same = p[i] * p[j] + (1.0 - p[i]) * (1.0 - p[j])
    loss = float(-np.log(np.maximum(same, _LOG_FLOOR)).mean())
    if not return_grad:
        return loss
    scale = -1.0 / (i.size * np.maximum(same, _LOG_FLOOR))
    g = grad.ravel()
    np.add.at(g, i, scale * (2.0 * p[j] - 1.0))
    np.add.at(g, j, scale * (2.0 * p[i] - 1.0))
    return loss, g.reshape(pred.shape)


def mask_loss(img, pred, box, cfg=PairwiseLossConfig()):
    """Box-supervised mask loss: projection term plus pairwise term."""
    return projection_loss(pred, box) + pairwise_loss(img, pred, cfg)


def read_mask(path):
    """Read a single-channel PNG mask; any non-zero pixel is foreground."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def write_mask(path, mask):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def format_dice(value):
    return f"{value:.4f}"


__all__ = [
    "OtsuResult", "otsu_threshold", "dice", "projection_loss", "pairwise_loss",
    "PairwiseLossConfig", "pairwise_edges", "mask_loss", "read_mask", "write_mask",
    "box_indicator", "format_dice",
]
