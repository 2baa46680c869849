"""Annotation formats (detector txt, COCO JSON), mix-up samples and dataset statistics."""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BoundingBox, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Annotation:
    class_index: int
    bbox: BoundingBox
    confidence: float = None
    weight: float = 1.0

    def normalized(self, width, height):
        return normalize_box(self.bbox, width, height)


def normalize_box(box, width, height):
    """(cx, cy, w, h) of ``box`` as fractions of the image size."""
    if not box.inside(width, height):
        raise DataError(f"box {box.as_tuple()} outside {width}x{height} image")
    return ((box.x_min + box.x_max) / 2.0 / width, (box.y_min + box.y_max) / 2.0 / height,
            box.width / width, box.height / height)


def denormalize_box(cx, cy, w, h, width, height):
    return BoundingBox((cx - w / 2.0) * width, (cy - h / 2.0) * height,
                       (cx + w / 2.0) * width, (cy + h / 2.0) * height)


def round_box(box):
    return BoundingBox(*(int(np.floor(v + 0.5)) for v in box.as_tuple()))


def write_detector_txt(anns, dims):
    """One ``class cx cy w h`` line per object, 6 decimals, LF-terminated.

    Annotations carrying a confidence get it appended as a sixth field.
    """
    width, height = dims
    lines = []
    for ann in anns:
        cx, cy, w, h = ann.normalized(width, height)
        line = f"{ann.class_index} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}"
        if ann.confidence is not None:
            line += f" {ann.confidence:.6f}"
        lines.append(line + "\n")
    return "".join(lines)


def parse_detector_txt(text, dims=(1, 1), source=""):
    """Inverse of :func:`write_detector_txt`; boxes come back in pixels of ``dims``.

    A sixth column is read as confidence. The default ``dims`` keeps boxes normalised.
    """
    width, height = dims
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            if len(parts) not in (5, 6):
                raise ValueError(f"expected 5 or 6 fields, got {len(parts)}")
            cls = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:5])
            conf = float(parts[5]) if len(parts) == 6 else None
            box = denormalize_box(cx, cy, w, h, width, height)
        except (ValueError, DataError) as exc:
            where = f"{source}:{lineno}" if source else f"line {lineno}"
            raise DataError(f"corrupt annotation at {where}: {exc}") from exc
        out.append(Annotation(cls, box, conf))
    return out


def read_detector_file(path, dims=(1, 1)):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read annotation file {path}: {exc}") from exc
    return parse_detector_txt(text, dims, source=str(path))


def dump_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _plain(v):
    # numpy scalars are not JSON serialisable
    return v.item() if isinstance(v, np.generic) else v


def write_coco_manifest(records, categories):
    """COCO-style document for ``records``.

    ``records`` are ``(file_name, width, height, [(class_index, BoundingBox), ...])``;
    images are ordered by file name and ids are dense from 1. Boxes are
    absolute ``[x, y, w, h]``.
    """
    if not records:
        raise DataError("cannot write a COCO manifest for an empty dataset")
    images, annotations = [], []
    for image_id, (name, width, height, boxes) in enumerate(sorted(records, key=lambda r: r[0]), 1):
        images.append({"id": image_id, "file_name": name, "width": width, "height": height})
        for cls, box in boxes:
            annotations.append({
                "id": len(annotations) + 1,
                "image_id": image_id,
                "category_id": int(cls),
                "bbox": [_plain(v) for v in (box.x_min, box.y_min, box.width, box.height)],
                "area": _plain(box.area),
                "iscrowd": 0,
            })
    cats = [{"id": c.index, "name": c.name} for c in sorted(categories)]
    return dump_json({"images": images, "annotations": annotations, "categories": cats})


def read_coco(source):
    """Map file name -> list of ``Annotation`` (pixel boxes) from a COCO document.

    ``source`` is a path or an already-parsed dict. An annotation ``score``
    is read as confidence.
    """
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read COCO file {source}: {exc}") from exc
    names = {img["id"]: img["file_name"] for img in doc.get("images", [])}
    out = {name: [] for name in names.values()}
    for ann in doc.get("annotations", []):
        x, y, w, h = ann["bbox"]
        out[names[ann["image_id"]]].append(
            Annotation(int(ann["category_id"]), BoundingBox(x, y, x + w, y + h), ann.get("score")))
    return out


# ---------------------------------------------------------------------------
# mix-up

@dataclass
class MixupSample:
    image: np.ndarray
    labels: list
    lam: float
    mask: np.ndarray = None

    def to_uint8(self):
        return np.clip(np.rint(self.image), 0, 255).astype(np.uint8)


def _blend(x1, x2, w):
    # w >= 0.5 so 1 - w is exact, and w == 0.5 is commutative.
    return w * x1 + (1.0 - w) * x2


def mixup(a, b, lam, mask=None):
    """Mix two ``(image, annotations)`` samples.

    Without ``mask``: ``lam * x1 + (1 - lam) * x2`` per pixel and channel.
    With a binary ``mask``: pixels come from ``x1`` where set, ``x2`` elsewhere.
    Labels are the union of both annotation lists, weighted ``lam`` and ``1 - lam``.
    """
    (x1, y1), (x2, y2) = a, b
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise DataError(f"cannot mix images of shapes {x1.shape} and {x2.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x1.shape[:2]:
            raise DataError(f"mixing mask {mask.shape} does not match image {x1.shape[:2]}")
        sel = mask if x1.ndim == 2 else mask[..., None]
        image = np.where(sel, x1, x2)
    elif lam >= 0.5:
        image = _blend(x1, x2, lam)
    else:
        image = _blend(x2, x1, 1.0 - lam)
    labels = ([Annotation(t.class_index, t.bbox, t.confidence, t.weight * lam) for t in y1]
              + [Annotation(t.class_index, t.bbox, t.confidence, t.weight * (1.0 - lam)) for t in y2])
    return MixupSample(image, labels, lam, mask)


def mixup_pass(samples, rng, prob=0.2, alpha=1.0):
    """Apply mix-up to a shuffled pairing of ``samples``.

    Pairs are drawn uniformly without replacement; each pair is mixed with
    probability ``prob`` using ``lam ~ Beta(alpha, alpha)``. Unmixed samples pass
    through with weight 1.
    """
    order = rng.permutation(len(samples))
    out = []
    for k in range(0, len(order) - 1, 2):
        a, b = samples[order[k]], samples[order[k + 1]]
        if rng.random() < prob:
            out.append(mixup(a, b, float(rng.beta(alpha, alpha))))
        else:
            out.extend(MixupSample(np.asarray(s[0], dtype=np.float64), list(s[1]), 1.0) for s in (a, b))
    if len(order) % 2:
        s = samples[order[-1]]
        out.append(MixupSample(np.asarray(s[0], dtype=np.float64), list(s[1]), 1.0))
    return out


def write_weighted_labels(labels, dims):
    """Detector lines with a trailing mix-up weight column."""
    width, height = dims
    lines = []
    for ann in labels:
        cx, cy, w, h = ann.normalized(width, height)
        lines.append(f"{ann.class_index} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f} {ann.weight:.6f}\n")
    return "".join(lines)


# ---------------------------------------------------------------------------
# per-image dataset files

def pack_mask(mask):
    mask = np.asarray(mask, dtype=bool)
    return {"shape": list(mask.shape),
            "bits": base64.b64encode(np.packbits(mask).tobytes()).decode("ascii")}


def unpack_mask(doc):
    h, w = doc["shape"]
    bits = np.frombuffer(base64.b64decode(doc["bits"]), dtype=np.uint8)
    return np.unpackbits(bits, count=h * w).reshape(h, w).astype(bool)


def image_annotations(img):
    return [Annotation(inst.class_id.index, inst.bbox) for inst in img.instances]


def image_meta(name, img):
    """Audit record for one synthetic image: augmentation parameters and alphas."""
    return {
        "image": name,
        "background": img.background_id,
        "seed": int(img.seed),
        **img.meta,
        "instances": [
            {
                "class_index": inst.class_id.index,
                "class_name": inst.class_id.name,
                "source": inst.source_id,
                "params": inst.params.to_dict(),
                "offset": list(inst.offset),
                "bbox": list(inst.bbox.as_tuple()),
                "visible_fraction": inst.visible_fraction,
                "occluded_fraction": inst.occluded_fraction,
                "alpha": pack_mask(inst.transformed.alpha_mask),
            }
            for inst in img.instances
        ],
    }


def write_image_files(out_dir, name, img):
    """Write ``images/<name>.png``, ``labels/<name>.txt`` and ``meta/<name>.json``."""
    from .catalog import write_png

    out_dir = Path(out_dir)
    h, w = img.canvas.shape[:2]
    write_png(out_dir / "images" / f"{name}.png", img.canvas)
    text = write_detector_txt(image_annotations(img), (w, h))
    (out_dir / "labels" / f"{name}.txt").write_bytes(text.encode("utf-8"))
    (out_dir / "meta" / f"{name}.json").write_bytes(dump_json(image_meta(name, img)).encode("utf-8"))


# ---------------------------------------------------------------------------
# statistics

@dataclass
class StatsRow:
    name: str
    masks_used: int = 0
    images_produced: int = 0
    instances: int = 0


@dataclass
class StatsTable:
    rows: list = field(default_factory=list)

    @property
    def totals(self):
        return StatsRow("Total",
                        sum(r.masks_used for r in self.rows),
                        sum(r.images_produced for r in self.rows),
                        sum(r.instances for r in self.rows))

    def to_dict(self):
        rows = [vars(r) for r in self.rows]
        return {"classes": rows, "totals": vars(self.totals)}


def _stats_from_manifest(manifest):
    return StatsTable([StatsRow(c["name"], c["masks_used"], c["images_produced"], c["instances"])
                       for c in manifest["classes"]])


def _stats_from_directory(root):
    root = Path(root)
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise DataError(f"corrupt manifest {manifest_path}: {exc}") from exc
        rows = {c["index"]: StatsRow(c["name"], c["masks_used"]) for c in manifest["classes"]}
    else:
        rows = {}
    sources = {}
    meta_dir = root / "meta"
    for path in sorted(meta_dir.glob("*.json")) if meta_dir.is_dir() else []:
        try:
            meta = json.loads(path.read_text(encoding="utf-8"))
            cls, name = meta["class_index"], meta["class_name"]
        except (ValueError, KeyError) as exc:
            raise DataError(f"corrupt annotation metadata {path}: {exc}") from exc
        row = rows.setdefault(cls, StatsRow(name))
        label_path = root / "labels" / f"{path.stem}.txt"
        row.images_produced += 1
        row.instances += len(read_detector_file(label_path))
        sources.setdefault(cls, set()).update(i["source"] for i in meta["instances"])
    if not manifest_path.exists():
        for cls, row in rows.items():
            row.masks_used = len(sources.get(cls, ()))
    return StatsTable([rows[k] for k in sorted(rows)])


def dataset_stats(source):
    """Per-class (masks used, images produced, instances) from a manifest dict or a dataset directory.

    Directory counts are recomputed from the files; only the masks column is
    taken from ``manifest.json`` when present.
    """
    if isinstance(source, dict):
        return _stats_from_manifest(source)
    return _stats_from_directory(source)


STATS_HEADERS = ("Class", "No of masks extracted", "No of images produced", "Instances")


def format_stats_table(table):
    rows = [(r.name, r.masks_used, r.images_produced, r.instances) for r in table.rows]
    t = table.totals
    rows.append((t.name, t.masks_used, t.images_produced, t.instances))
    width = max([len(STATS_HEADERS[0])] + [len(r[0]) for r in rows])
    cols = [len(h) for h in STATS_HEADERS[1:]]

    def line(cells):
        return "  ".join([str(cells[0]).ljust(width)]
                         + [str(c).rjust(n) for c, n in zip(cells[1:], cols)])

    rule = "-" * len(line(STATS_HEADERS))
    out = [line(STATS_HEADERS), rule] + [line(r) for r in rows[:-1]] + [rule, line(rows[-1])]
    return "\n".join(out) + "\n"
