import json
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sria.batches import SynthesisConfig, run_all
from sria.core import BoundingBox, ClassId, DataError
from sria.dataset_io import (STATS_HEADERS, Annotation, dataset_stats, format_stats_table, mixup,
                             mixup_pass, pack_mask, parse_detector_txt, read_coco, round_box,
                             unpack_mask, write_coco_manifest, write_detector_txt)

from conftest import make_catalog

LINE = re.compile(r"^(\d+) (\d\.\d{6}) (\d\.\d{6}) (\d\.\d{6}) (\d\.\d{6})$")


def independent_txt(text, width, height):
    """Regex-based reader: (class, x0, y0, x1, y1) in pixels."""
    out = []
    for line in text.split("\n")[:-1]:
        m = LINE.match(line)
        assert m, line
        cls, cx, cy, w, h = int(m[1]), *(float(g) for g in m.groups()[1:])
        out.append((cls, (cx - w / 2) * width, (cy - h / 2) * height,
                    (cx + w / 2) * width, (cy + h / 2) * height))
    return out


class TestDetectorTxt:
    def test_example_line(self):
        text = write_detector_txt([Annotation(3, BoundingBox(10, 20, 30, 60))], (100, 200))
        assert text == "3 0.200000 0.200000 0.200000 0.200000\n"

    def test_confidence_column(self):
        text = write_detector_txt([Annotation(0, BoundingBox(0, 0, 4, 4), 0.5)], (8, 8))
        assert text == "0 0.250000 0.250000 0.500000 0.500000 0.500000\n"
        (ann,) = parse_detector_txt(text, (8, 8))
        assert ann.confidence == 0.5 and ann.bbox == BoundingBox(0, 0, 4, 4)

    def test_empty(self):
        assert write_detector_txt([], (10, 10)) == ""
        assert parse_detector_txt("") == []

    def test_outside_box_rejected(self):
        with pytest.raises(DataError):
            write_detector_txt([Annotation(0, BoundingBox(0, 0, 11, 4))], (10, 10))

    def test_corrupt_line_names_location(self):
        with pytest.raises(DataError, match=r"a\.txt:2"):
            parse_detector_txt("0 0.5 0.5 0.1 0.1\n0 0.5 oops 0.1 0.1\n", source="a.txt")
        with pytest.raises(DataError, match="line 1"):
            parse_detector_txt("0 0.5 0.5\n")

    @settings(max_examples=100)
    @given(st.integers(8, 2000), st.integers(8, 2000), st.data())
    def test_round_trip_integer_boxes(self, W, H, data):
        anns = []
        for _ in range(data.draw(st.integers(0, 5))):
            x0 = data.draw(st.integers(0, W - 1))
            y0 = data.draw(st.integers(0, H - 1))
            x1 = data.draw(st.integers(x0 + 1, W))
            y1 = data.draw(st.integers(y0 + 1, H))
            anns.append(Annotation(data.draw(st.integers(0, 30)), BoundingBox(x0, y0, x1, y1)))
        text = write_detector_txt(anns, (W, H))
        theirs = independent_txt(text, W, H)
        ours = parse_detector_txt(text, (W, H))
        assert len(theirs) == len(ours) == len(anns)
        for a, t, o in zip(anns, theirs, ours):
            assert t[0] == o.class_index == a.class_index
            # 6 decimals on a normalised coordinate loses < 1e-6 * size per edge
            assert np.allclose(t[1:], a.bbox.as_tuple(), atol=1e-6 * max(W, H) + 1e-9)
            assert round_box(o.bbox) == a.bbox


class TestCoco:
    RECORDS = [
        ("b.png", 40, 30, [(1, BoundingBox(2, 3, 12, 9))]),
        ("a.png", 40, 30, [(0, BoundingBox(0, 0, 40, 30)), (1, BoundingBox(5, 5, 6, 6))]),
    ]
    CATS = [ClassId(1, "nut"), ClassId(0, "bolt")]

    def test_structure(self):
        doc = json.loads(write_coco_manifest(self.RECORDS, self.CATS))
        assert [i["file_name"] for i in doc["images"]] == ["a.png", "b.png"]
        assert [i["id"] for i in doc["images"]] == [1, 2]
        assert [a["id"] for a in doc["annotations"]] == [1, 2, 3]
        assert doc["annotations"][2] == {"id": 3, "image_id": 2, "category_id": 1,
                                         "bbox": [2, 3, 10, 6], "area": 60, "iscrowd": 0}
        assert doc["categories"] == [{"id": 0, "name": "bolt"}, {"id": 1, "name": "nut"}]

    def test_round_trip_through_plain_json(self):
        text = write_coco_manifest(self.RECORDS, self.CATS)
        raw = json.loads(text)
        names = {i["id"]: i["file_name"] for i in raw["images"]}
        plain = {}
        for a in raw["annotations"]:
            x, y, w, h = a["bbox"]
            plain.setdefault(names[a["image_id"]], []).append((a["category_id"], (x, y, x + w, y + h)))
        expected = {n: [(c, b.as_tuple()) for c, b in boxes] for n, _, _, boxes in self.RECORDS}
        assert plain == expected
        ours = read_coco(raw)
        assert {n: [(a.class_index, a.bbox.as_tuple()) for a in v] for n, v in ours.items()} == expected

    def test_deterministic_bytes(self):
        assert write_coco_manifest(self.RECORDS, self.CATS) == write_coco_manifest(
            list(reversed(self.RECORDS)), self.CATS)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            write_coco_manifest([], self.CATS)

    def test_unreadable(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{")
        with pytest.raises(DataError, match="c.json"):
            read_coco(p)


def pair(seed, shape=(6, 5, 3)):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, shape).astype(np.uint8)
    b = rng.integers(0, 256, shape).astype(np.uint8)
    return ((a, [Annotation(0, BoundingBox(0, 0, 2, 2))]),
            (b, [Annotation(1, BoundingBox(1, 1, 3, 4)), Annotation(2, BoundingBox(0, 0, 1, 1))]))


class TestMixup:
    def test_lambda_one_is_identity(self):
        a, b = pair(0)
        out = mixup(a, b, 1.0)
        assert np.array_equal(out.image, a[0].astype(np.float64))
        assert np.array_equal(out.to_uint8(), a[0])
        assert [l.weight for l in out.labels] == [1.0, 0.0, 0.0]

    def test_lambda_zero_is_other(self):
        a, b = pair(1)
        assert np.array_equal(mixup(a, b, 0.0).to_uint8(), b[0])

    def test_mask_is_elementwise_select(self):
        a, b = pair(2)
        mask = np.random.default_rng(9).random((6, 5)) < 0.5
        out = mixup(a, b, 0.3, mask)
        m3 = np.repeat(mask[..., None], 3, axis=2)
        expected = m3 * a[0].astype(np.float64) + (1 - m3) * b[0].astype(np.float64)
        assert np.array_equal(out.image, expected)
        assert np.array_equal(out.to_uint8(), np.where(m3, a[0], b[0]))

    def test_labels_weighted(self):
        a, b = pair(3)
        w = [l.weight for l in mixup(a, b, 0.7).labels]
        assert w == [0.7, 1.0 - 0.7, 1.0 - 0.7]

    @settings(max_examples=200)
    @given(st.integers(0, 2**31), st.floats(0.0, 1.0))
    def test_symmetry(self, seed, lam):
        a, b = pair(seed)
        assert np.array_equal(mixup(a, b, lam).image, mixup(b, a, 1.0 - lam).image)

    def test_errors(self):
        a, b = pair(4)
        with pytest.raises(ValueError):
            mixup(a, b, 1.5)
        with pytest.raises(DataError):
            mixup(a, (b[0][:3], b[1]), 0.5)
        with pytest.raises(DataError):
            mixup(a, b, 0.5, np.ones((2, 2), bool))

    def test_pass_probability_and_passthrough(self):
        samples = [pair(k)[0] for k in range(2001)]
        out = mixup_pass(samples, np.random.default_rng(0), prob=0.2)
        mixed = [s for s in out if len(s.labels) == 2]
        singles = [s for s in out if len(s.labels) == 1]
        assert len(mixed) * 2 + len(singles) == 2001
        assert 0.15 < len(mixed) / 1000 < 0.25
        assert all(s.lam == 1.0 for s in singles)
        assert mixup_pass(samples[:1], np.random.default_rng(0))[0].lam == 1.0


def test_pack_mask_round_trip():
    m = np.random.default_rng(0).random((7, 13)) < 0.4
    doc = pack_mask(m)
    assert json.loads(json.dumps(doc)) == doc
    assert np.array_equal(unpack_mask(doc), m)


class TestStats:
    def test_empty_directory(self, tmp_path):
        t = dataset_stats(tmp_path)
        assert t.rows == [] and vars(t.totals) == {"name": "Total", "masks_used": 0,
                                                   "images_produced": 0, "instances": 0}

    def test_directory_recount_matches_manifest(self, tmp_path):
        cat = make_catalog(3, per_class=2, size=(100, 90))
        res = run_all(SynthesisConfig(per_batch_cap=4, master_seed=3), cat, tmp_path)
        assert dataset_stats(tmp_path).to_dict() == dataset_stats(res.manifest).to_dict()
        (tmp_path / "manifest.json").unlink()
        recount = dataset_stats(tmp_path)
        for row, entry in zip(recount.rows, res.manifest["classes"]):
            assert row.images_produced == entry["images_produced"]
            assert row.instances == entry["instances"]
            assert row.masks_used <= entry["masks_used"]

    def test_table_layout(self):
        t = dataset_stats({"classes": [
            {"index": 0, "name": "Battery", "masks_used": 12, "images_produced": 40, "instances": 55},
            {"index": 1, "name": "Wrench", "masks_used": 3, "images_produced": 9, "instances": 9}]})
        text = format_stats_table(t)
        lines = text.splitlines()
        assert lines[0].split("  ")[0].strip() == STATS_HEADERS[0]
        for h in STATS_HEADERS:
            assert h in lines[0]
        assert lines[-1].split() == ["Total", "15", "49", "64"]
        assert lines[2].split() == ["Battery", "12", "40", "55"]
        assert text.endswith("\n")

    def test_corrupt_meta(self, tmp_path):
        (tmp_path / "meta").mkdir()
        (tmp_path / "meta" / "x.json").write_text("{}")
        with pytest.raises(DataError, match="x.json"):
            dataset_stats(tmp_path)
