import json
import logging
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from softlabel import (
    Annotation,
    Box,
    Dataset,
    Detection,
    DuplicateImageId,
    ImageRecord,
    MalformedRecord,
    MissingLabelFile,
    RemapTable,
    UnknownCategory,
    emit_detections,
    emit_yolo_labels,
    ingest_xview,
    load_dataset,
    parse_detections,
    parse_yolo_labels,
    save_dataset,
)
from softlabel.annotations import emit_sidecar, example_remap_path, load_detections, parse_sidecar, save_detections
from conftest import make_dataset


class TestParseLabels:
    def test_single_line(self):
        assert parse_yolo_labels("1 0.5 0.5 0.25 0.25") == [Annotation(1, Box(0.5, 0.5, 0.25, 0.25))]

    def test_empty_is_background(self):
        assert parse_yolo_labels("") == []
        assert parse_yolo_labels("\n\n") == []

    def test_width_above_one(self):
        with pytest.raises(MalformedRecord, match="line 1"):
            parse_yolo_labels("1 0.5 0.5 1.2 0.25")

    def test_line_number_of_bad_line(self):
        with pytest.raises(MalformedRecord) as info:
            parse_yolo_labels("0 0.5 0.5 0.1 0.1\n0 0.5 0.5 0.1\n", source="a.txt")
        assert info.value.locator == "line 2"
        assert "a.txt" in str(info.value)

    @pytest.mark.parametrize(
        "line",
        ["0 x 0.5 0.1 0.1", "0 0.5 0.5 0 0.1", "0 0.5 0.5 0.1 -0.1", "a 0.5 0.5 0.1 0.1", "-1 0.5 0.5 0.1 0.1",
         "0 nan 0.5 0.1 0.1", "0 0.5 inf 0.1 0.1", "0 0.5 0.5 0.1 0.1 0.3", "1.5 0.5 0.5 0.1 0.1"],
    )
    def test_malformed(self, line):
        with pytest.raises(MalformedRecord, match="line 1"):
            parse_yolo_labels(line)

    def test_tiny_overshoot_clamped(self, caplog):
        with caplog.at_level(logging.WARNING):
            (a,) = parse_yolo_labels("0 1.0000005 0.5 0.1 0.1")
        assert a.box.cx == 1.0
        assert "clamping" in caplog.text

    def test_larger_overshoot_rejected(self):
        with pytest.raises(MalformedRecord):
            parse_yolo_labels("0 1.00001 0.5 0.1 0.1")


class TestDetections:
    def test_parse(self):
        (d,) = parse_detections("2 0.4 0.4 0.2 0.1 0.873")
        assert d.category_id == 2 and d.confidence == 0.873
        assert d.box == Box(0.4, 0.4, 0.2, 0.1)

    def test_confidence_out_of_range(self):
        with pytest.raises(MalformedRecord):
            parse_detections("2 0.4 0.4 0.2 0.1 1.5")

    def test_missing_confidence(self):
        with pytest.raises(MalformedRecord, match="expected 6 fields"):
            parse_detections("2 0.4 0.4 0.2 0.1")

    def test_emit_keeps_order(self):
        dets = [Detection(2, Box(0.4, 0.4, 0.2, 0.1), 0.5), Detection(0, Box(0.1, 0.1, 0.1, 0.1), 0.9)]
        assert parse_detections(emit_detections(dets)) == dets

    def test_sidecar_round_trip(self):
        assert parse_sidecar(emit_sidecar([0.25, 1.0])) == [0.25, 1.0]


class TestEmit:
    def test_format(self):
        assert emit_yolo_labels([Annotation(1, Box(0.5, 0.5, 0.25, 0.25))]) == "1 0.500000 0.500000 0.250000 0.250000\n"

    def test_sorted_by_category_then_cx(self):
        anns = [Annotation(1, Box(0.2, 0.5, 0.1, 0.1)), Annotation(0, Box(0.7, 0.5, 0.1, 0.1)), Annotation(0, Box(0.3, 0.5, 0.1, 0.1))]
        lines = emit_yolo_labels(anns).splitlines()
        assert [ln.split()[:2] for ln in lines] == [["0", "0.300000"], ["0", "0.700000"], ["1", "0.200000"]]

    def test_tiny_size_not_zero(self):
        text = emit_yolo_labels([Annotation(0, Box(0.5, 0.5, 1e-9, 0.1))])
        assert parse_yolo_labels(text)[0].box.w == 1e-6

    def test_empty(self):
        assert emit_yolo_labels([]) == ""


six = st.integers(0, 10**6).map(lambda k: k / 10**6)
pos = st.integers(1, 10**6).map(lambda k: k / 10**6)
annotation = st.builds(lambda c, x, y, w, h: Annotation(c, Box(x, y, w, h)), st.integers(0, 5), six, six, pos, pos)


@settings(max_examples=300)
@given(st.lists(annotation, max_size=12))
def test_round_trip_exact(anns):
    text = emit_yolo_labels(anns)
    back = parse_yolo_labels(text)
    assert sorted(back, key=lambda a: (a.category_id, a.box.as_tuple())) == sorted(
        anns, key=lambda a: (a.category_id, a.box.as_tuple())
    )
    assert emit_yolo_labels(back) == text


@settings(max_examples=200)
@given(st.lists(st.builds(lambda c, x, y, w, h: Annotation(c, Box(x, y, w, h)), st.integers(0, 3),
                          st.floats(0, 1), st.floats(0, 1), st.floats(1e-9, 1), st.floats(1e-9, 1)), max_size=8))
def test_emit_parse_emit_fixed_point(anns):
    text = emit_yolo_labels(anns)
    assert emit_yolo_labels(parse_yolo_labels(text)) == text


def mutate(line, rng):
    """A deliberately invalid variant of a valid label line."""
    fields = line.split()
    kind = rng.randrange(6)
    if kind == 0:
        del fields[rng.randrange(len(fields))]
    elif kind == 1:
        fields.insert(rng.randrange(len(fields) + 1), fields[rng.randrange(len(fields))])
    elif kind == 2:
        fields[rng.randrange(len(fields))] = rng.choice(["x", "--", "1e", "0x1", "nan", "inf", "", "é"]) or "?"
    elif kind == 3:
        fields[rng.randrange(1, 5)] = str(rng.choice([-1, 1]) * rng.uniform(1.01, 1e6))
    elif kind == 4:
        fields[rng.randrange(3, 5)] = rng.choice(["0", "0.0", "-0.5"])
    else:
        fields[0] = rng.choice(["-3", "1.5", "one", "9" * 30 + ".1"])
    return " ".join(fields)


def test_fuzzed_lines_always_carry_locator():
    rng = random.Random(1)
    for _ in range(2000):
        good = emit_yolo_labels([Annotation(rng.randrange(3), Box(rng.random(), rng.random(), 0.1, 0.2))]).strip()
        bad = mutate(good, rng)
        n = rng.randrange(1, 4)
        text = (good + "\n") * n + bad + "\n"
        with pytest.raises(MalformedRecord) as info:
            parse_yolo_labels(text)
        assert info.value.locator == f"line {n + 1}"


REMAP = RemapTable(("ship", "car", "plane"), {50: 0, 18: 1, 11: 2})


def feature(type_id, bounds, image_id="img.tif"):
    return {"type": "Feature", "properties": {"type_id": type_id, "bounds_imcoords": bounds, "image_id": image_id}}


def collection(*features):
    return json.dumps({"type": "FeatureCollection", "features": list(features)})


class TestXView:
    def test_conversion(self):
        ds, skipped = ingest_xview(collection(feature(18, "10,20,110,220")), {"img.tif": (1000, 500)}, REMAP)
        (a,) = ds.images[0].annotations
        assert a.category_id == 1
        assert a.box.as_tuple() == pytest.approx((0.06, 0.24, 0.1, 0.4), abs=1e-12)
        assert not skipped

    def test_unmapped_skipped_and_counted(self):
        feats = [feature(18, "10,20,110,220"), feature(73, "0,0,5,5"), feature(73, "bogus"), feature(99, "1,1,2,2")]
        ds, skipped = ingest_xview(collection(*feats), {"img.tif": (1000, 500)}, REMAP)
        assert skipped == Counter({73: 2, 99: 1})
        assert ds.instance_count() + sum(skipped.values()) == len(feats)

    @pytest.mark.parametrize("bounds", ["10,20,1010,220", "110,20,10,220", "10,20,10,220", "-1,0,5,5", "a,b,c,d"])
    def test_bad_bounds(self, bounds):
        with pytest.raises(MalformedRecord, match="feature 1"):
            ingest_xview(collection(feature(18, "0,0,5,5"), feature(18, bounds)), {"img.tif": (1000, 500)}, REMAP)

    def test_unknown_image(self):
        with pytest.raises(MalformedRecord, match="unknown image"):
            ingest_xview(collection(feature(18, "0,0,5,5", "other.tif")), {"img.tif": (1000, 500)}, REMAP)

    def test_images_without_features_are_background(self):
        ds, _ = ingest_xview(collection(), {"a": (10, 10), "b": (10, 10)}, REMAP)
        assert [r.background for r in ds.images] == [True, True]

    def test_not_geojson(self):
        with pytest.raises(MalformedRecord):
            ingest_xview("[1, 2]", {}, REMAP)

    def test_remap_target_must_exist(self):
        with pytest.raises(UnknownCategory):
            RemapTable(("ship",), {1: 3})

    def test_bundled_example_remap(self):
        table = RemapTable.load(example_remap_path())
        assert table.categories == ("ship", "car", "plane")
        assert table.entries[18] == 1 and table.entries[11] == 2

    @settings(max_examples=50)
    @given(st.lists(st.sampled_from([11, 18, 50, 5, 73]), max_size=30))
    def test_counts_conserved(self, types):
        feats = [feature(t, "1,1,9,9") for t in types]
        ds, skipped = ingest_xview(collection(*feats), {"img.tif": (10, 10)}, REMAP)
        assert ds.instance_count() + sum(skipped.values()) == len(types)


class TestManifest:
    def write(self, tmp_path, images, categories=("ship", "car", "plane"), labels=None):
        for name, text in (labels or {}).items():
            (tmp_path / name).write_text(text)
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"categories": list(categories), "images": images}))
        return path

    def test_background_record(self, tmp_path):
        path = self.write(
            tmp_path,
            [{"id": "a", "width": 10, "height": 10, "labels": "a.txt"},
             {"id": "b", "width": 10, "height": 10, "labels": "b.txt", "background": True}],
            labels={"a.txt": "0 0.5 0.5 0.1 0.1\n"},
        )
        ds = load_dataset(path)
        assert [len(r.annotations) for r in ds.images] == [1, 0]

    def test_missing_label_file(self, tmp_path):
        path = self.write(tmp_path, [{"id": "a", "width": 10, "height": 10, "labels": "a.txt"}])
        with pytest.raises(MissingLabelFile):
            load_dataset(path)

    def test_duplicate_id(self, tmp_path):
        rec = {"id": "a", "width": 10, "height": 10, "labels": "a.txt", "background": True}
        with pytest.raises(DuplicateImageId):
            load_dataset(self.write(tmp_path, [rec, rec]))

    def test_unknown_category(self, tmp_path):
        path = self.write(tmp_path, [{"id": "a", "width": 10, "height": 10, "labels": "a.txt"}],
                          labels={"a.txt": "7 0.5 0.5 0.1 0.1\n"})
        with pytest.raises(UnknownCategory):
            load_dataset(path)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "m.json").write_text("{")
        with pytest.raises(MalformedRecord):
            load_dataset(tmp_path / "m.json")

    def test_save_load_round_trip(self, tmp_path):
        ds = make_dataset({"a": [(0, 0.25, 0.5, 0.125, 0.25), (2, 0.5, 0.5, 0.5, 0.5)], "b": []})
        save_dataset(ds, tmp_path / "out.json")
        assert load_dataset(tmp_path / "out.json") == ds
        assert (tmp_path / "out_labels" / "b.txt").read_text() == ""
        assert json.loads((tmp_path / "out.json").read_text())["images"][1]["background"] is True

    def test_dataset_invariants(self):
        with pytest.raises(DuplicateImageId):
            Dataset(("a",), (ImageRecord("x", 1, 1, ()), ImageRecord("x", 1, 1, ())))
        with pytest.raises(UnknownCategory):
            Dataset(("a",), (ImageRecord("x", 1, 1, (Annotation(1, Box(0.5, 0.5, 0.1, 0.1)),)),))
        with pytest.raises(ValueError):
            ImageRecord("x", 0, 1, ())

    def test_detections_dir(self, tmp_path):
        dets = {"a": [Detection(1, Box(0.5, 0.5, 0.1, 0.1), 0.75)]}
        save_detections(tmp_path, dets)
        assert load_detections(tmp_path, ["a", "b"]) == dets
