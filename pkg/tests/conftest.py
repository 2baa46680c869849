import hashlib

import numpy as np
import pytest
from PIL import Image

from sria.catalog import Catalog, write_png
from sria.core import Background, ClassId, Cutout


def blob_rgba(rng, h, w, kind):
    """Solid shape with a random colour inside an (h, w) box touching all edges."""
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == "ellipse":
        mask = ((yy + 0.5 - h / 2) / (h / 2)) ** 2 + ((xx + 0.5 - w / 2) / (w / 2)) ** 2 <= 1.0
        # thin ellipses can miss the outer rows; the axes keep the support tight
        mask[h // 2, :] = True
        mask[:, w // 2] = True
    elif kind == "ell":
        mask = (xx < max(1, w // 3)) | (yy >= h - max(1, h // 3))
    else:
        mask = np.ones((h, w), dtype=bool)
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    rgba[..., :3] = rng.integers(0, 256, size=3)
    rgba[..., :3] += rng.integers(0, 20, size=(h, w, 1), dtype=np.uint8)
    rgba[..., 3] = np.where(mask, 255, 0)
    return rgba


def smooth_background(rng, H, W):
    """Low-frequency texture, closer to pavement than white noise."""
    coarse = rng.integers(60, 200, size=(H // 16 + 2, W // 16 + 2, 3), dtype=np.uint8)
    img = Image.fromarray(coarse).resize((W, H), Image.BILINEAR)
    return np.asarray(img)


def make_catalog(n_classes=2, per_class=3, n_bg=2, size=(300, 300), obj=(20, 60), seed=0,
                 smooth=False):
    rng = np.random.default_rng(seed)
    classes = [ClassId(i, f"class{i}") for i in range(n_classes)]
    cutouts = {}
    kinds = ("ellipse", "ell", "rect")
    for c in classes:
        cutouts[c.index] = []
        for k in range(per_class):
            h, w = (int(v) for v in rng.integers(obj[0], obj[1] + 1, size=2))
            cutouts[c.index].append(Cutout(c, blob_rgba(rng, h, w, kinds[k % 3]), f"{c.name}/{k}"))
    W, H = size
    backgrounds = [Background(smooth_background(rng, H, W) if smooth
                              else rng.integers(0, 256, size=(H, W, 3), dtype=np.uint8), f"bg{i}")
                   for i in range(n_bg)]
    return Catalog(classes, cutouts, backgrounds)


def write_catalog_dir(root, n_classes=2, per_class=3, n_bg=2, size=(120, 100), seed=0,
                      class_names=None):
    """On-disk catalog; half the objects are image+mask pairs, half pre-cut RGBA."""
    rng = np.random.default_rng(seed)
    names = class_names or [f"class{i}" for i in range(n_classes)]
    for ci, name in enumerate(names):
        d = root / "objects" / name
        d.mkdir(parents=True)
        count = per_class[ci] if isinstance(per_class, (list, tuple)) else per_class
        for k in range(count):
            h, w = (int(v) for v in rng.integers(6, 20, size=2))
            rgba = blob_rgba(rng, h, w, ("ellipse", "ell", "rect")[k % 3])
            if k % 2 == 0:
                img = rng.integers(0, 256, size=(h + 8, w + 6, 3), dtype=np.uint8)
                mask = np.zeros((h + 8, w + 6), dtype=np.uint8)
                img[3:3 + h, 2:2 + w] = rgba[..., :3]
                mask[3:3 + h, 2:2 + w] = rgba[..., 3]
                write_png(d / f"obj{k:03d}.png", img)
                write_png(d / f"obj{k:03d}_mask.png", mask)
            else:
                write_png(d / f"obj{k:03d}_rgba.png", rgba)
    bgd = root / "backgrounds"
    bgd.mkdir(parents=True, exist_ok=True)
    W, H = size
    for i in range(n_bg):
        write_png(bgd / f"runway{i:02d}__crack.png",
                  rng.integers(0, 256, size=(H, W, 3), dtype=np.uint8))
    return root


@pytest.fixture
def toy_catalog():
    return make_catalog()


@pytest.fixture
def catalog_dir(tmp_path):
    return write_catalog_dir(tmp_path / "catalog")


def tree_digest(root, subdirs=("images", "labels")):
    """sha256 over (relative path, bytes) of every file below ``subdirs``."""
    h = hashlib.sha256()
    for sub in subdirs:
        for p in sorted((root / sub).rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(root)).encode())
                h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


# One PASS/FAIL line per acceptance criterion, printed after the run.
_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _CRITERIA[name] = "FAIL"
    elif report.skipped:
        _CRITERIA.setdefault(name, "SKIP")
    elif report.when == "call":
        _CRITERIA.setdefault(name, "PASS")


def pytest_terminal_summary(terminalreporter):
    rows = _CRITERIA
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(rows):
        num, title = name[len("test_criterion_"):].split("_", 1)
        terminalreporter.write_line(f"criterion {int(num):2d} {rows[name]}: {title.replace('_', ' ')}")
