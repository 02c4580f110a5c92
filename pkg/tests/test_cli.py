import json
import shutil
import subprocess
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from softlabel import load_dataset
from softlabel.cli import main

REFERENCE = str(Path(__file__).parent / "data" / "reference_results.json")


@pytest.fixture
def world(tmp_path):
    assert main(["synth", "--n-images", "30", "--seed", "2", "--out", str(tmp_path / "gt.json")]) == 0
    return tmp_path


def test_synth_simulate_softlabel_eval(world, capsys):
    gt = str(world / "gt.json")
    assert main(["simulate", "--manifest", gt, "--seed", "5", "--out", str(world / "dets")]) == 0
    assert main(["softlabel", "--skeleton", gt, "--dets", str(world / "dets"), "--conf", "0.5",
                 "--out", str(world / "soft.json")]) == 0
    soft = load_dataset(world / "soft.json")
    assert soft.ids == load_dataset(gt).ids
    capsys.readouterr()
    assert main(["eval", "--truth", gt, "--dets", str(world / "dets"), "--iou", "0.7"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert 0 < doc["map50"] <= 1 and "ap@0.7" in doc["per_category"]["car"]


def test_eval_perfect_markdown(world, capsys):
    gt = str(world / "gt.json")
    noise = world / "zero.json"
    noise.write_text(json.dumps({"drop_rate": 0, "center_jitter_sd": 0, "size_jitter_sd": 0,
                                 "fp_per_image": 0, "tp_confidence": 1.0}))
    assert main(["simulate", "--manifest", gt, "--noise", str(noise), "--out", str(world / "d")]) == 0
    assert main(["eval", "--truth", gt, "--dets", str(world / "d"), "--format", "markdown"]) == 0
    assert capsys.readouterr().out.startswith("mAP50 1.00000 | mAP50:95 1.00000 | F1 1.000")


def test_split_and_stats(world, capsys):
    assert main(["split", "--manifest", str(world / "gt.json"), "--seed", "1", "--out", str(world / "s")]) == 0
    assert [len(load_dataset(world / "s" / f"{n}.json")) for n in ("train1", "train2", "valid")] == [12, 12, 6]
    capsys.readouterr()
    assert main(["stats", "--manifest", str(world / "gt.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert sum(map(sum, doc["heatmap"])) == doc["n_instances"]


def test_render(world, capsys):
    gt = load_dataset(world / "gt.json")
    rid = next(r.id for r in gt.images if r.annotations)
    assert main(["render", "--truth", str(world / "gt.json"), "--soft", str(world / "gt.json"), "--id", rid]) == 0
    root = ET.fromstring(capsys.readouterr().out)
    strokes = [e.get("stroke") for e in root.iter("{http://www.w3.org/2000/svg}rect")]
    n = len(gt.subset([rid]).images[0].annotations)
    assert strokes == ["green"] * n + ["red"] * n
    assert main(["render", "--truth", str(world / "gt.json"), "--out", str(world / "svg")]) == 0
    assert len(list((world / "svg").glob("*.svg"))) == 30


def test_ingest_xview(tmp_path, capsys):
    feats = [{"properties": {"type_id": t, "bounds_imcoords": "10,20,110,220", "image_id": "a.tif"}} for t in (18, 11, 73)]
    (tmp_path / "g.json").write_text(json.dumps({"type": "FeatureCollection", "features": feats}))
    (tmp_path / "dims.json").write_text(json.dumps({"a.tif": [1000, 500]}))
    assert main(["ingest-xview", "--geojson", str(tmp_path / "g.json"), "--dims", str(tmp_path / "dims.json"),
                 "--out", str(tmp_path / "x.json")]) == 0
    assert json.loads(capsys.readouterr().out) == {"images": 1, "mapped": 2, "skipped": {"73": 1}}
    assert load_dataset(tmp_path / "x.json").instance_count() == 2


def test_report_select(capsys):
    assert main(["report", "--input", REFERENCE, "--select", "category=plane", "conf=0.5"]) == 0
    assert capsys.readouterr().out == "-8.4886\n"
    assert main(["report", "--input", REFERENCE, "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("model,train_set,conf,category")


def test_experiment(tmp_path, capsys):
    assert main(["experiment", "--n-images", "60", "--out", str(tmp_path / "e"), "--conf", "0.3", "0.5"]) == 0
    assert "| Train Set 2 Soft | 0.5 |" in capsys.readouterr().out
    assert (tmp_path / "e" / "report.json").exists()


@pytest.mark.parametrize("argv", [
    ["report", "--input", "missing.json"],
    ["eval", "--truth", "missing.json", "--dets", "x"],
])
def test_missing_input_exit_2(argv):
    assert main(argv) == 2


def test_malformed_input_exit_2(tmp_path):
    (tmp_path / "m.json").write_text('{"categories": ["a"], "images": [{"id": "x", "width": 1, "height": 1, "labels": "x.txt"}]}')
    (tmp_path / "x.txt").write_text("0 0.5 0.5 0.1\n")
    assert main(["stats", "--manifest", str(tmp_path / "m.json")]) == 2


def test_config_errors_exit_3(world):
    gt = str(world / "gt.json")
    assert main(["split", "--manifest", gt, "--ratios", "0.5", "0.5", "0.5", "--out", str(world / "s")]) == 3
    assert main(["softlabel", "--skeleton", gt, "--dets", str(world), "--conf", "2", "--out", str(world / "o.json")]) == 3
    assert main(["report", "--input", REFERENCE, "--select", "colour=red"]) == 3
    assert main(["eval", "--bogus"]) == 3


def test_empty_selection_exit_2():
    assert main(["report", "--input", REFERENCE, "--select", "category=boat"]) == 2


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("eval", "softlabel", "split", "stats", "render", "simulate", "experiment", "ingest-xview", "report"):
        assert cmd in out


@pytest.mark.skipif(shutil.which("softlabel") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["softlabel", "report", "--input", REFERENCE, "--select", "category=car"],
                          capture_output=True, text=True, env={"SOFTLABEL_LOG": "bogus", "PATH": "/usr/local/bin:/usr/bin:/bin"})
    assert proc.returncode == 0 and proc.stdout == "-0.6396\n"
