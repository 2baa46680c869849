"""Six-batch synthesis schedule: every class gets images from recipes B1..B6.

Each image draws its own generator from ``(master_seed, class, batch, image)``,
so output does not depend on worker count or scheduling order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .compositor import Constraints, NoInstanceFits, synthesize_image
from .core import Background, DataError
from .dataset_io import dump_json, image_annotations, write_coco_manifest, write_image_files
from .transforms import AugmentParams, AugmentRanges

log = logging.getLogger(__name__)

_COUNT_STREAM = 0xC0
_IMAGE_ATTEMPTS = 5


@dataclass(frozen=True)
class BatchRecipe:
    id: str
    use_rotation: bool = False
    use_scale: bool = False
    use_occlusion: bool = False
    use_truncation: bool = True
    use_instances: bool = False

    @property
    def flags(self):
        names = (("R", self.use_rotation), ("S", self.use_scale), ("O", self.use_occlusion),
                 ("T", self.use_truncation), ("I", self.use_instances))
        return frozenset(n for n, on in names if on)


RECIPES = (
    BatchRecipe("B1", use_occlusion=True),
    BatchRecipe("B2", use_rotation=True, use_scale=True, use_occlusion=True),
    BatchRecipe("B3", use_instances=True),
    BatchRecipe("B4", use_rotation=True, use_scale=True, use_instances=True),
    BatchRecipe("B5", use_rotation=True, use_occlusion=True),
    BatchRecipe("B6", use_scale=True, use_occlusion=True),
)


@dataclass
class SynthesisConfig:
    classes: list = None  # class names; None means every catalog class
    per_batch_cap: int = 65
    count_mode: str = "uniform"
    ranges: AugmentRanges = field(default_factory=AugmentRanges)
    constraints: Constraints = field(default_factory=Constraints)
    instance_range: tuple = (1, 6)
    master_seed: int = 0
    canvas_size: tuple = None
    max_retries: int = 20

    def __post_init__(self):
        if self.per_batch_cap < 1:
            raise ValueError(f"per_batch_cap must be positive, got {self.per_batch_cap}")
        if self.count_mode not in ("uniform", "fixed"):
            raise ValueError(f"count_mode must be 'uniform' or 'fixed', got {self.count_mode!r}")
        lo, hi = self.instance_range
        if not 1 <= lo <= hi <= 6:
            raise ValueError(f"instance_range must lie within 1..6, got {self.instance_range}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "ranges" in doc:
            r = doc["ranges"]
            doc["ranges"] = AugmentRanges(tuple(r.get("rotation", (-45.0, 45.0))),
                                          tuple(r.get("scale", (0.25, 0.6))),
                                          r.get("tilt_max", 0.001))
        if "constraints" in doc:
            c = doc["constraints"]
            doc["constraints"] = Constraints(c.get("T", c.get("trunc_floor", 0.25)),
                                             c.get("O", c.get("occlusion_cap", 0.6)))
        for key in ("instance_range", "canvas_size"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self):
        return {
            "classes": list(self.classes) if self.classes is not None else None,
            "per_batch_cap": self.per_batch_cap,
            "count_mode": self.count_mode,
            "ranges": {"rotation": list(self.ranges.rotation), "scale": list(self.ranges.scale),
                       "tilt_max": self.ranges.tilt_max},
            "constraints": {"T": self.constraints.trunc_floor, "O": self.constraints.occlusion_cap},
            "instance_range": list(self.instance_range),
            "master_seed": self.master_seed,
            "canvas_size": list(self.canvas_size) if self.canvas_size else None,
            "max_retries": self.max_retries,
        }

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def image_rng(master_seed, class_index, batch_index, image_index):
    return np.random.default_rng(np.random.SeedSequence(
        [master_seed, class_index, batch_index, image_index]))


def batch_counts(config, class_index):
    """Images per recipe for one class: uniform in [1, cap], or the cap itself."""
    if config.count_mode == "fixed":
        return [config.per_batch_cap] * len(RECIPES)
    rng = np.random.default_rng(np.random.SeedSequence(
        [config.master_seed, class_index, _COUNT_STREAM]))
    return [int(n) for n in rng.integers(1, config.per_batch_cap + 1, size=len(RECIPES))]


def sample_params(recipe, ranges, rng):
    rotation = tilt = 0.0
    scale = 1.0
    if recipe.use_rotation:
        rotation = float(rng.uniform(*ranges.rotation))
        if ranges.tilt_max > 0:
            tilt = float(rng.uniform(0.0, ranges.tilt_max))
    if recipe.use_scale:
        scale = float(rng.uniform(*ranges.scale))
    return AugmentParams(rotation, scale, tilt)


def recipe_constraints(recipe, constraints):
    return Constraints(constraints.trunc_floor if recipe.use_truncation else 1.0,
                       constraints.occlusion_cap if recipe.use_occlusion else 0.0)


def render_image(recipe, class_cutouts, backgrounds, config, class_index, batch_index, image_index):
    """One synthetic image for ``recipe``; None if every attempt placed nothing."""
    rng = image_rng(config.master_seed, class_index, batch_index, image_index)
    seed = int(rng.bit_generator.seed_seq.generate_state(1, np.uint64)[0])
    constraints = recipe_constraints(recipe, config.constraints)
    lo, hi = config.instance_range
    for _ in range(_IMAGE_ATTEMPTS):
        bg = backgrounds[int(rng.integers(len(backgrounds)))]
        n = int(rng.integers(lo, hi + 1)) if recipe.use_instances else 1
        picks = []
        for _ in range(n):
            cut = class_cutouts[int(rng.integers(len(class_cutouts)))]
            picks.append((cut, sample_params(recipe, config.ranges, rng), None))
        try:
            img = synthesize_image(bg, picks, constraints, rng, config.max_retries, seed)
        except NoInstanceFits:
            continue
        img.meta.update({"recipe": recipe.id, "image_index": image_index,
                         "class_index": picks[0][0].class_id.index,
                         "class_name": picks[0][0].class_id.name,
                         "requested_instances": n})
        return img
    log.warning("class %d %s image %d: no placement fit after %d attempts",
                class_index, recipe.id, image_index, _IMAGE_ATTEMPTS)
    return None


def run_batch(recipe, class_cutouts, backgrounds, count, config, class_index, batch_index=None):
    """Generate ``count`` images for one class under ``recipe``."""
    if count > config.per_batch_cap:
        raise ValueError(f"count {count} exceeds per-batch cap {config.per_batch_cap}")
    if not class_cutouts:
        raise DataError(f"class {class_index} has no cutouts")
    if not backgrounds:
        raise DataError("no backgrounds available")
    if batch_index is None:
        batch_index = [r.id for r in RECIPES].index(recipe.id)
    images = []
    for i in range(count):
        img = render_image(recipe, class_cutouts, backgrounds, config, class_index, batch_index, i)
        if img is not None:
            images.append(img)
    return images


def image_name(class_index, recipe_id, image_index):
    return f"c{class_index:02d}_{recipe_id}_{image_index:03d}"


def fit_background(bg, size):
    if size is None or (bg.width, bg.height) == tuple(size):
        return bg
    rgb = np.asarray(Image.fromarray(bg.rgb).resize(tuple(size), Image.BILINEAR))
    return Background(rgb, bg.source_id, bg.tags)


# Worker state, set once per process so the catalog is not re-pickled per job.
_STATE = {}


def _init_worker(catalog, backgrounds, config, out_dir):
    _STATE.update(catalog=catalog, backgrounds=backgrounds, config=config, out_dir=out_dir)


def _run_job(job):
    cls, batch_index, count = job
    catalog, config = _STATE["catalog"], _STATE["config"]
    recipe = RECIPES[batch_index]
    images = run_batch(recipe, catalog.cutouts_for(cls), _STATE["backgrounds"], count,
                       config, cls.index, batch_index)
    out_dir = _STATE["out_dir"]
    records = []
    for img in images:
        name = image_name(cls.index, recipe.id, img.meta["image_index"])
        h, w = img.canvas.shape[:2]
        boxes = [(a.class_index, a.bbox) for a in image_annotations(img)]
        records.append((f"{name}.png", w, h, boxes))
        if out_dir is not None:
            write_image_files(out_dir, name, img)
    return cls.index, batch_index, records, (None if out_dir is not None else images)


@dataclass
class SynthesisResult:
    manifest: dict
    records: list
    images: list = None


def plan(config, catalog):
    classes = catalog.classes
    if config.classes is not None:
        by_name = {c.name: c for c in catalog.classes}
        missing = [n for n in config.classes if n not in by_name]
        if missing:
            raise DataError(f"configured classes not in catalog: {missing}")
        classes = [by_name[n] for n in config.classes]
    jobs = []
    for cls in classes:
        if not catalog.cutouts_for(cls):
            log.warning("skipping class %r: no cutouts", cls.name)
            continue
        for b, count in enumerate(batch_counts(config, cls.index)):
            jobs.append((cls, b, count))
    return classes, jobs


def build_manifest(config, catalog, classes, results):
    per_class = {c.index: {"index": c.index, "name": c.name,
                           "masks_used": len(catalog.cutouts_for(c)),
                           "images_produced": 0, "instances": 0,
                           "batches": {r.id: 0 for r in RECIPES}} for c in classes}
    for cls_index, batch_index, records, _ in results:
        entry = per_class[cls_index]
        entry["images_produced"] += len(records)
        entry["instances"] += sum(len(r[3]) for r in records)
        entry["batches"][RECIPES[batch_index].id] += len(records)
    rows = [per_class[c.index] for c in classes]
    totals = {k: sum(r[k] for r in rows) for k in ("masks_used", "images_produced", "instances")}
    return {"seed": config.master_seed, "config_hash": config.digest(),
            "per_batch_cap": config.per_batch_cap, "classes": rows, "totals": totals}


def run_all(config, catalog, out_dir=None, workers=1):
    """Run every (class, recipe) batch and assemble the manifest.

    With ``out_dir`` the images, labels, per-image metadata, ``coco.json``
    and ``manifest.json`` are written there and images are not kept in memory.
    """
    if not catalog.backgrounds:
        raise DataError("catalog has no backgrounds")
    classes, jobs = plan(config, catalog)
    if not jobs:
        raise DataError("no class in the catalog has cutouts")
    backgrounds = [fit_background(bg, config.canvas_size) for bg in catalog.backgrounds]
    if out_dir is not None:
        out_dir = Path(out_dir)
        for sub in ("images", "labels", "meta"):
            (out_dir / sub).mkdir(parents=True, exist_ok=True)

    workers = workers or os.cpu_count() or 1
    if workers == 1:
        _init_worker(catalog, backgrounds, config, out_dir)
        results = [_run_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(catalog, backgrounds, config, out_dir)) as pool:
            results = list(pool.map(_run_job, jobs))

    manifest = build_manifest(config, catalog, classes, results)
    records = [rec for r in results for rec in r[2]]
    images = None if out_dir is not None else [img for r in results for img in r[3]]
    if out_dir is not None:
        (out_dir / "manifest.json").write_bytes(dump_json(manifest).encode("utf-8"))
        if records:
            (out_dir / "coco.json").write_bytes(
                write_coco_manifest(records, classes).encode("utf-8"))
    return SynthesisResult(manifest, records, images)


__all__ = ["BatchRecipe", "RECIPES", "SynthesisConfig", "SynthesisResult", "run_batch", "run_all",
           "batch_counts", "sample_params", "image_rng", "image_name", "plan"]
