"""Detection metrics: IoU, greedy matching, PR curves, AP and mAP over IoU thresholds."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BoundingBox, DataError

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    bbox: BoundingBox
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_id: int
    bbox: BoundingBox


def iou(a, b):
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass
class MatchResult:
    """``pairs`` maps detection index -> ground-truth index for true positives."""

    pairs: dict
    false_positives: list
    false_negatives: list

    @property
    def tp(self):
        return len(self.pairs)

    @property
    def fp(self):
        return len(self.false_positives)

    @property
    def fn(self):
        return len(self.false_negatives)


def match(dets, gts, iou_threshold=0.5):
    """Greedy one-to-one matching within one image and class.

    Detections go in descending confidence (stable for ties); each takes the
    still-unmatched ground truth with the highest IoU >= ``iou_threshold``,
    lowest index on IoU ties.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(gts)
    pairs, fps = {}, []
    for i in order:
        best, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(dets[i].bbox, gt.bbox)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
            pairs[i] = best
        else:
            fps.append(i)
    fns = [j for j, t in enumerate(taken) if not t]
    return MatchResult(pairs, fps, fns)


@dataclass
class PRCurve:
    """(recall, precision) points in descending-confidence order."""

    recall: np.ndarray
    precision: np.ndarray
    confidence: np.ndarray = None
    n_gt: int = 0

    @property
    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def _group(items):
    out = defaultdict(list)
    for it in items:
        out[(it.image_id, it.class_id)].append(it)
    return out


def pr_curve(dets, gts, class_id, iou_threshold=0.5):
    """PR curve for one class pooled over all images."""
    dets = [d for d in dets if d.class_id == class_id]
    gts = [g for g in gts if g.class_id == class_id]
    det_groups, gt_groups = _group(dets), _group(gts)
    scored = []
    for key, group in det_groups.items():
        result = match(group, gt_groups.get(key, []), iou_threshold)
        for i, d in enumerate(group):
            scored.append((d.confidence, i in result.pairs))
    # Stable sort on confidence; ties keep image order, which is deterministic per input.
    scored.sort(key=lambda s: -s[0])
    tp = np.array([s[1] for s in scored], dtype=np.float64)
    conf = np.array([s[0] for s in scored], dtype=np.float64)
    cum_tp = np.cumsum(tp)
    n = np.arange(1, len(tp) + 1)
    recall = cum_tp / len(gts) if gts else np.zeros_like(cum_tp)
    precision = cum_tp / n if len(tp) else cum_tp
    return PRCurve(recall, precision, conf, len(gts))


def average_precision(curve, method="101"):
    """Area under the interpolated PR curve.

    ``method="101"`` samples the precision envelope at recall 0.00..1.00
    (COCO style); ``"all"`` integrates the envelope at every recall change.
    """
    if len(curve.recall) == 0:
        return 0.0
    recall = np.asarray(curve.recall, dtype=np.float64)
    precision = np.asarray(curve.precision, dtype=np.float64)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if method == "101":
        idx = np.searchsorted(recall, RECALL_GRID, side="left")
        sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
        return float(sampled.mean())
    if method == "all":
        r = np.concatenate([[0.0], recall])
        return float(np.sum((r[1:] - r[:-1]) * envelope))
    raise ValueError(f"unknown AP method {method!r}")


@dataclass
class EvalReport:
    ap: dict = field(default_factory=dict)  # class -> {threshold: AP}
    map_50: float = 0.0
    map_50_95: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    conf_threshold: float = 0.25
    thresholds: tuple = IOU_THRESHOLDS

    def to_dict(self):
        return {
            "mAP_50": self.map_50,
            "mAP_50_95": self.map_50_95,
            "precision": self.precision,
            "recall": self.recall,
            "conf_threshold": self.conf_threshold,
            "iou_thresholds": list(self.thresholds),
            "per_class_ap": {str(c): {f"{t:.2f}": v for t, v in aps.items()}
                             for c, aps in sorted(self.ap.items())},
        }


def _operating_point(dets, gts, class_id, conf_threshold, iou_threshold):
    dets = [d for d in dets if d.class_id == class_id and d.confidence >= conf_threshold]
    gts = [g for g in gts if g.class_id == class_id]
    det_groups, gt_groups = _group(dets), _group(gts)
    tp = sum(match(g, gt_groups.get(k, []), iou_threshold).tp for k, g in det_groups.items())
    precision = tp / len(dets) if dets else 0.0
    return precision, tp / len(gts)


def map_range(dets, gts, thresholds=IOU_THRESHOLDS, conf_threshold=0.25, method="101"):
    """AP per class and IoU threshold, averaged into mAP@0.5 and mAP@[0.5:0.95].

    Classes absent from the ground truth are left out of every mean.
    Precision and recall are class means at ``conf_threshold`` and IoU 0.5.
    """
    if not gts:
        raise DataError("no ground-truth boxes to evaluate against")
    classes = sorted({g.class_id for g in gts})
    report = EvalReport(conf_threshold=conf_threshold, thresholds=tuple(thresholds))
    for c in classes:
        report.ap[c] = {t: average_precision(pr_curve(dets, gts, c, t), method) for t in thresholds}
    per_threshold = [float(np.mean([report.ap[c][t] for c in classes])) for t in thresholds]
    report.map_50_95 = float(np.mean(per_threshold))
    report.map_50 = per_threshold[list(thresholds).index(0.5)] if 0.5 in thresholds else float("nan")
    pr = [_operating_point(dets, gts, c, conf_threshold, 0.5) for c in classes]
    report.precision = float(np.mean([p for p, _ in pr]))
    report.recall = float(np.mean([r for _, r in pr]))
    return report


REPORT_HEADERS = ("Method", "mAP (0.5)", "mAP (0.5-0.95)", "Precision", "Recall")


def format_report_table(rows):
    """Fixed-width table; ``rows`` are ``(method_name, EvalReport)`` pairs."""
    width = max([len(REPORT_HEADERS[0])] + [len(name) for name, _ in rows])
    cols = [max(len(h), 6) for h in REPORT_HEADERS[1:]]
    head = "  ".join([REPORT_HEADERS[0].ljust(width)] + [h.rjust(n) for h, n in zip(REPORT_HEADERS[1:], cols)])
    lines = [head, "-" * len(head)]
    for name, r in rows:
        vals = (r.map_50, r.map_50_95, r.precision, r.recall)
        lines.append("  ".join([name.ljust(width)] + [f"{v:.3f}".rjust(n) for v, n in zip(vals, cols)]))
    return "\n".join(lines) + "\n"


def load_txt_tree(root, with_confidence):
    """Read ``<stem>.txt`` detector files from ``root``; boxes stay normalised.

    IoU is invariant to per-axis scaling, so normalised boxes evaluate the same
    as pixel boxes.
    """
    from .dataset_io import read_detector_file

    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    out = []
    for path in sorted(root.glob("*.txt")):
        for ann in read_detector_file(path):
            if with_confidence:
                if ann.confidence is None:
                    raise DataError(f"prediction in {path} lacks a confidence field")
                out.append(Detection(path.stem, ann.class_index, ann.bbox, ann.confidence))
            else:
                out.append(GroundTruth(path.stem, ann.class_index, ann.bbox))
    return out


def load_coco_tree(path, with_confidence):
    from .dataset_io import read_coco

    out = []
    for name, anns in sorted(read_coco(path).items()):
        stem = Path(name).stem
        for ann in anns:
            if with_confidence:
                out.append(Detection(stem, ann.class_index, ann.bbox,
                                     1.0 if ann.confidence is None else ann.confidence))
            else:
                out.append(GroundTruth(stem, ann.class_index, ann.bbox))
    return out


def load_annotations(path, with_confidence):
    path = Path(path)
    if path.suffix == ".json":
        return load_coco_tree(path, with_confidence)
    return load_txt_tree(path, with_confidence)


def write_report(report, out_dir, method="model"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    table = format_report_table([(method, report)])
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    return table
