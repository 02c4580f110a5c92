import csv
import io
import json
import math

import pytest

from softlabel import (
    BadConfig,
    EmptySelection,
    ExperimentConfig,
    InputError,
    NoiseModel,
    Report,
    UndefinedDelta,
    aggregate_deltas,
    emit_report,
    relative_delta,
    run_experiment,
)
from softlabel.harness import DeltaEntry, trained_on
from softlabel.pipeline import DiscrepancyReport


class TestRelativeDelta:
    def test_percent(self):
        assert relative_delta(0.0415, 0.042767) == pytest.approx(3.053, abs=5e-4)

    def test_log(self):
        assert relative_delta(0.0415, 0.042767, mode="log") == pytest.approx(3.01, abs=5e-3)
        assert relative_delta(2.0, 4.0, mode="log") == pytest.approx(100 * math.log(2))

    def test_identity(self):
        assert relative_delta(0.7, 0.7) == 0.0

    def test_zero_baseline(self):
        with pytest.raises(UndefinedDelta):
            relative_delta(0.0, 0.5)

    def test_bad_mode(self):
        with pytest.raises(BadConfig):
            relative_delta(1.0, 2.0, mode="ratio")


class TestAggregate:
    table = [
        DeltaEntry("A", 0.3, "car", "precision", -2.0),
        DeltaEntry("A", 0.5, "car", "recall", 4.0),
        DeltaEntry("A", 0.5, "plane", "recall", -6.0),
        DeltaEntry("A", 0.5, None, "map50", 1.0),
    ]

    def test_signed_and_absolute(self):
        assert aggregate_deltas(self.table, {"category": "car"}) == 1.0
        assert aggregate_deltas(self.table, {"category": "car"}, "absolute-mean") == 3.0

    def test_selectors(self):
        assert aggregate_deltas(self.table, {"category": "*", "conf": 0.5}) == -1.0
        assert aggregate_deltas(self.table, {"category": ("car", "plane")}) == pytest.approx(-4 / 3)
        assert aggregate_deltas(self.table, lambda e: e.category is None) == 1.0
        assert aggregate_deltas(self.table) == pytest.approx(-0.75)

    def test_empty_selection(self):
        with pytest.raises(EmptySelection):
            aggregate_deltas(self.table, {"category": "ship"})

    def test_bad_mode(self):
        with pytest.raises(BadConfig):
            aggregate_deltas(self.table, None, "median")


def test_reference_report_recomputes_deltas(reference):
    r = Report.from_dict(reference["report"])
    for row in r.soft_rows():
        base = r.baseline_of(row)
        d = r.row_deltas(row)
        assert d["map50"] == relative_delta(base.map50, row.map50)
        for c, ds in r.category_deltas(row).items():
            assert ds["recall"] == relative_delta(base.per_category[c].recall, row.per_category[c].recall)


def test_reference_round_trip(reference):
    r = Report.from_dict(reference["report"])
    text = emit_report(r, "json")
    assert emit_report(Report.from_dict(json.loads(text)), "json") == text


def test_markdown_header(reference):
    md = emit_report(Report.from_dict(reference["report"]), "markdown")
    header = next(ln for ln in md.splitlines() if ln.startswith("| Model"))
    for col in ("Model", "Conf", "mAP50", "mAP95", "F1"):
        assert f" {col} " in header
    assert "(-7.47%)" in md and "0.0579 points" in md


def test_csv_rows(reference):
    doc = json.loads(json.dumps(reference["report"]))
    text = emit_report(Report.from_dict(doc), "csv")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 6 * 4
    for r in doc["rows"]:
        r["per_category"] = {}
    rows = list(csv.DictReader(io.StringIO(emit_report(Report.from_dict(doc), "csv"))))
    assert len(rows) == 6 and {r["category"] for r in rows} == {"all"}


def test_soft_row_without_baseline(reference):
    doc = json.loads(json.dumps(reference["report"]))
    doc["rows"] = [r for r in doc["rows"] if r["conf"] is not None or r["train_set"] != "train2"]
    with pytest.raises(InputError, match="no baseline"):
        Report.from_dict(doc)


def test_trained_on_degrades_by_discrepancy():
    base = NoiseModel(0.1, 0.003, 0.05, None, 0.5)
    m = trained_on(base, DiscrepancyReport(box_mse=1e-4, coverage=0.8, false_positive_rate=0.2, class_disagreement=0.3), 3, 7)
    assert m.drop_rate == pytest.approx(1 - 0.9 * 0.8)
    assert m.fp_per_image == pytest.approx(0.7)
    assert m.center_jitter_sd == pytest.approx(math.sqrt(0.003**2 + 1e-4))
    assert m.confusion[0] == pytest.approx([0.7, 0.15, 0.15])
    assert trained_on(base, DiscrepancyReport(), 3, base.seed) == base


def small_config(tmp_path, name, **kw):
    kw.setdefault("synth", {"n_images": 120})
    return ExperimentConfig(output_dir=str(tmp_path / name), overlays=1, **kw)


class TestExperiment:
    def test_layout(self, tmp_path):
        r = run_experiment(small_config(tmp_path, "a"))
        assert [(x.name, x.conf) for x in r.rows] == [
            ("Train Set 1", None), ("Train Set 1 Soft", 0.3), ("Train Set 1 Soft", 0.5),
            ("Train Set 2", None), ("Train Set 2 Soft", 0.3), ("Train Set 2 Soft", 0.5),
        ]
        out = tmp_path / "a"
        for p in ("report.json", "report.md", "report.csv", "config.json", "splits/valid.json",
                  "soft/train1_soft0.30.json", "soft/train2_soft0.50_labels"):
            assert (out / p).exists(), p
        assert list((out / "overlays" / "train1_soft0.30").glob("*.svg"))
        assert list((out / "soft" / "train1_soft0.30_labels").glob("*.conf"))

    def test_zero_noise(self, tmp_path):
        r = run_experiment(small_config(tmp_path, "z", noise=NoiseModel.zero_noise()))
        for row in r.rows:
            assert row.map50 == 1.0 and row.map5095 == 1.0 and row.best_f1 == 1.0
        for row in r.soft_rows():
            assert row.discrepancy == {"box_mse": 0.0, "coverage": 1.0, "fp_rate": 0.0, "class_disagreement": 0.0}

    def test_deterministic_and_jobs_invariant(self, tmp_path):
        run_experiment(small_config(tmp_path, "a"))
        run_experiment(small_config(tmp_path, "b"), jobs=3)
        for f in ("report.json", "report.md", "report.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_coverage_falls_with_threshold(self, tmp_path):
        r = run_experiment(small_config(tmp_path, "t", thresholds=(0.1, 0.3, 0.5, 0.7, 0.9)))
        for ts in ("train1", "train2"):
            covs = [x.discrepancy["coverage"] for x in r.soft_rows() if x.train_set == ts]
            assert covs == sorted(covs, reverse=True)

    def test_stage_context_in_errors(self, tmp_path):
        (tmp_path / "m.json").write_text('{"categories": ["a"], "images": [{"id": "x", "width": 4, "height": 4, "labels": "x.txt"}]}')
        cfg = ExperimentConfig(output_dir=str(tmp_path / "o"), manifest=str(tmp_path / "m.json"))
        with pytest.raises(InputError, match=r"^\[load\]"):
            run_experiment(cfg)

    def test_config_round_trip(self):
        cfg = ExperimentConfig(thresholds=[0.2, 0.4], noise=NoiseModel(0.3))
        assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    @pytest.mark.parametrize("kw", [{"thresholds": (1.3,)}, {"thresholds": ()}, {"delta_mode": "x"},
                                    {"split_ratios": (0.5, 0.5, 0.5)}])
    def test_bad_config(self, kw):
        with pytest.raises(BadConfig):
            ExperimentConfig(**kw)
