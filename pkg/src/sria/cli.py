"""Synthetic cut-and-paste detection datasets: segment, extract, synthesize, evaluate.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import batches, catalog, dataset_io, evaluation, mask_lab
from .core import ClassId, DataError, fod_vocabulary

log = logging.getLogger("sria")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
FOD_CANVAS = (300, 300)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="master seed (default 0)")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help="worker processes (default: CPU count)")
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="JSON config file")
    return common


def cmd_segment(args):
    img = catalog.read_rgb(args.image)
    gray = np.asarray(np.rint(img @ np.array([0.299, 0.587, 0.114])), dtype=np.uint8)
    result = mask_lab.otsu_threshold(gray)
    mask_lab.write_mask(args.out, result.mask)
    note = " (degenerate: constant image)" if result.degenerate else ""
    print(f"threshold {result.threshold}{note}")


def cmd_dice(args):
    a = catalog.read_gray_mask(args.mask_a)
    b = catalog.read_gray_mask(args.mask_b)
    print(mask_lab.format_dice(mask_lab.dice(a, b)))


def _vocabulary(name):
    if name == "fod":
        return fod_vocabulary()
    return None


def cmd_extract(args):
    img = catalog.read_rgb(args.image)
    mask = catalog.read_gray_mask(args.mask)
    cut, (x, y) = catalog.extract_cutout(img, mask, ClassId(args.class_index, args.class_name),
                                         str(args.image))
    catalog.write_png(args.out, cut.rgba)
    print(f"{cut.width}x{cut.height} cutout at offset ({x}, {y}) -> {args.out}")


def _synth_config(args):
    doc = {}
    if getattr(args, "config", None) is not None:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
    for key, value in (("per_batch_cap", args.cap), ("count_mode", args.count_mode),
                       ("master_seed", getattr(args, "seed", None)),
                       ("canvas_size", tuple(args.canvas) if args.canvas else None)):
        if value is not None:
            doc[key] = value
    if getattr(args, "vocab", None) == "fod":
        doc.setdefault("canvas_size", FOD_CANVAS)
    try:
        return batches.SynthesisConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synthesis config: {exc}") from exc


def cmd_synth(args):
    config = _synth_config(args)
    root = Path(args.catalog)
    if not (root / "backgrounds").is_dir():
        raise DataError(f"missing backgrounds directory {root / 'backgrounds'}")
    workers = getattr(args, "workers", None) or os.cpu_count() or 1
    cat = catalog.load_catalog(root, _vocabulary(args.vocab), workers=workers)
    result = batches.run_all(config, cat, out_dir=args.out, workers=workers)
    table = dataset_io.format_stats_table(dataset_io.dataset_stats(result.manifest))
    Path(args.out, "stats.txt").write_text(table, encoding="utf-8")
    print(table, end="")


def cmd_stats(args):
    table = dataset_io.dataset_stats(Path(args.dataset))
    if args.json:
        print(dataset_io.dump_json(table.to_dict()), end="")
    else:
        print(dataset_io.format_stats_table(table), end="")


def cmd_mixup(args):
    x1, x2 = catalog.read_rgb(args.image_a), catalog.read_rgb(args.image_b)
    h, w = x1.shape[:2]
    y1 = dataset_io.read_detector_file(args.labels_a, (w, h)) if args.labels_a else []
    y2 = dataset_io.read_detector_file(args.labels_b, (w, h)) if args.labels_b else []
    mask = catalog.read_gray_mask(args.mask) if args.mask else None
    sample = dataset_io.mixup((x1, y1), (x2, y2), args.lam, mask)
    out = Path(args.out)
    catalog.write_png(out, sample.to_uint8())
    out.with_suffix(".txt").write_text(dataset_io.write_weighted_labels(sample.labels, (w, h)),
                                       encoding="utf-8")
    print(f"mixed with lambda={args.lam} -> {out}")


def cmd_eval(args):
    gts = evaluation.load_annotations(args.gt, with_confidence=False)
    dets = evaluation.load_annotations(args.pred, with_confidence=True)
    report = evaluation.map_range(dets, gts, conf_threshold=args.conf,
                                  method="all" if args.all_points else "101")
    print(evaluation.write_report(report, args.out, args.method), end="")


def build_parser():
    common = _global_flags()
    parser = _Parser(prog="sria", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("segment", parents=[common], help="Otsu foreground mask of an image")
    p.add_argument("image", type=Path)
    p.add_argument("out", type=Path)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("dice", parents=[common], help="Dice coefficient of two mask PNGs")
    p.add_argument("mask_a", type=Path)
    p.add_argument("mask_b", type=Path)
    p.set_defaults(func=cmd_dice)

    p = sub.add_parser("extract", parents=[common], help="cut an RGBA object out of image + mask")
    p.add_argument("image", type=Path)
    p.add_argument("mask", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--class-index", type=int, default=0)
    p.add_argument("--class-name", default="object")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", parents=[common], help="generate the six-batch synthetic dataset")
    p.add_argument("catalog", type=Path, help="catalog root with objects/ and backgrounds/")
    p.add_argument("out", type=Path)
    p.add_argument("--cap", type=int, default=None, help="per-batch image cap (default 65)")
    p.add_argument("--count-mode", choices=("uniform", "fixed"), default=None)
    p.add_argument("--canvas", type=int, nargs=2, metavar=("W", "H"), default=None)
    p.add_argument("--vocab", choices=("dirs", "fod"), default="dirs",
                   help="class indices from sorted directory names or the 31-class FOD list "
                        "(which also defaults the canvas to 300x300)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", parents=[common], help="per-class statistics of a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mixup", parents=[common], help="mix two images (and labels)")
    p.add_argument("image_a", type=Path)
    p.add_argument("image_b", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--labels-a", type=Path)
    p.add_argument("--labels-b", type=Path)
    p.add_argument("--mask", type=Path, help="binary mixing mask PNG")
    p.set_defaults(func=cmd_mixup)

    p = sub.add_parser("eval", parents=[common], help="mAP / precision / recall of predictions")
    p.add_argument("gt", type=Path, help="label directory or COCO JSON")
    p.add_argument("pred", type=Path, help="prediction directory or COCO JSON (with scores)")
    p.add_argument("--out", type=Path, default=Path("eval_report"))
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--method", default="model", help="row label in the report table")
    p.add_argument("--all-points", action="store_true", help="all-point AP instead of 101-point")
    p.set_defaults(func=cmd_eval)
    return parser


def _setup_logging():
    level = os.environ.get("SRIA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"sria: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"sria: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
