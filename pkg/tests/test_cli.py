from __future__ import annotations

import json
import struct

import pytest

from echofinder.cli import main
from echofinder.config import THREADS_ENV, load_config
from echofinder.echogram_io import load_dataset
from echofinder.reporting import RUN_MANIFEST, read_detections, read_rois
from echofinder.roi_extractor import extract_rois

SMALL_CONFIG = """\
synth:
  width: 240
  height: 160
  n_schools: [2, 3]
  school_height_px: [50, 90]
  school_width_px: [8, 16]
  n_decoys: [0, 1]
  n_plumes: [1, 2]
  plume_height_px: [30, 60]
  n_clutter: 30
  max_attempts: 500
mining:
  crop_size: 16
linear:
  epochs: 5
cnn:
  epochs: 2
  batch_size: 8
  conv1_filters: 2
  conv2_filters: 2
  hidden: 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "small.yaml"
    config.write_text(SMALL_CONFIG, encoding="utf-8")
    data = root / "data"
    assert main(["--config", str(config), "synth", "--out", str(data), "--n", "10", "--seed", "5"]) == 0
    samples = root / "samples"
    assert main(["--config", str(config), "mine", "--in", str(data), "--out", str(samples)]) == 0
    return root, config, data, samples


def _cli(config, *args):
    return main(["--config", str(config), "--log-level", "WARNING", *args])


def test_synth_layout(workspace):
    _, _, data, _ = workspace
    assert len(list(data.glob("*.ech"))) == 10
    assert (data / RUN_MANIFEST).exists()
    splits = [item.split for item in load_dataset(data)]
    assert [splits.count(s) for s in ("train", "val", "test")] == [6, 1, 3]


def test_extract_matches_library(workspace, tmp_path):
    _, config, data, _ = workspace
    out = tmp_path / "rois.json"
    assert _cli(config, "extract", "--in", str(data), "--out", str(out)) == 0
    cfg = load_config(str(config))
    expected = {item.echogram_id: extract_rois(item.echogram, cfg.roi, cfg.normalization) for item in load_dataset(data)}
    assert read_rois(out) == expected
    assert (tmp_path / "rois.run.json").exists()


def test_extract_single_file(workspace, tmp_path):
    _, config, data, _ = workspace
    out = tmp_path / "one.json"
    assert _cli(config, "extract", "--in", str(data / "echo_0000.ech"), "--out", str(out)) == 0
    assert list(read_rois(out)) == ["echo_0000"]


def test_threads_do_not_change_output(workspace, tmp_path, monkeypatch):
    _, config, data, _ = workspace
    assert _cli(config, "extract", "--in", str(data), "--out", str(tmp_path / "a.json")) == 0
    monkeypatch.setenv(THREADS_ENV, "3")
    assert _cli(config, "extract", "--in", str(data), "--out", str(tmp_path / "b.json")) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_smaller_area_threshold_gives_superset(workspace, tmp_path):
    _, config, data, _ = workspace
    loose = tmp_path / "loose.yaml"
    loose.write_text(config.read_text(encoding="utf-8") + "roi:\n  min_area_px: 1\n", encoding="utf-8")
    assert _cli(config, "extract", "--in", str(data), "--out", str(tmp_path / "d.json")) == 0
    assert _cli(loose, "extract", "--in", str(data), "--out", str(tmp_path / "l.json")) == 0
    default = read_rois(tmp_path / "d.json")
    relaxed = read_rois(tmp_path / "l.json")
    for echogram_id, boxes in default.items():
        assert set(boxes) <= set(relaxed[echogram_id])


def test_mined_samples(workspace):
    _, _, _, samples = workspace
    manifest = json.loads((samples / "samples.json").read_text(encoding="utf-8"))["samples"]
    assert {entry["split"] for entry in manifest} <= {"train", "val"}
    train = [e for e in manifest if e["split"] == "train"]
    positives = sum(e["label"] == "positive" for e in train)
    assert positives > 0
    assert len(train) - positives <= 2 * positives


def test_training_is_byte_identical(workspace, tmp_path):
    _, config, _, samples = workspace
    for kind in ("linear", "cnn"):
        first = tmp_path / f"{kind}_a.model"
        second = tmp_path / f"{kind}_b.model"
        assert _cli(config, "train", "--samples", str(samples), "--model", kind, "--out", str(first)) == 0
        assert _cli(config, "train", "--samples", str(samples), "--model", kind, "--out", str(second)) == 0
        assert first.read_bytes() == second.read_bytes()
        assert (tmp_path / f"{kind}_a.run.json").exists()


def test_detect_then_evaluate_matches_direct_evaluation(workspace, tmp_path, capsys):
    _, config, data, samples = workspace
    model = tmp_path / "linear.model"
    dets = tmp_path / "dets.json"
    assert _cli(config, "train", "--samples", str(samples), "--model", "linear", "--out", str(model)) == 0
    assert _cli(config, "detect", "--in", str(data), "--model", str(model), "--out", str(dets)) == 0
    classifier, detections = read_detections(dets)
    assert classifier == "linear-svm"
    assert len(detections) == 3
    capsys.readouterr()
    assert _cli(config, "evaluate", "--in", str(data), "--out", str(tmp_path / "a.json"), "--detections", str(dets)) == 0
    assert "ROI recall" in capsys.readouterr().out
    assert _cli(config, "evaluate", "--in", str(data), "--out", str(tmp_path / "b.json"), "--model", str(model)) == 0
    via_file = json.loads((tmp_path / "a.json").read_text(encoding="utf-8"))["framework"][0]
    direct = json.loads((tmp_path / "b.json").read_text(encoding="utf-8"))["framework"][0]
    for key in ("precision", "recall", "f1", "roi_recall", "per_echogram"):
        assert via_file[key] == direct[key]
    assert via_file["recall"] <= via_file["roi_recall"]


def test_evaluate_threshold_rows(workspace, tmp_path, capsys):
    _, config, data, _ = workspace
    out = tmp_path / "m.json"
    capsys.readouterr()
    assert _cli(config, "evaluate", "--in", str(data), "--out", str(out), "--iou", "0.0", "0.2", "0.4") == 0
    rows = json.loads(out.read_text(encoding="utf-8"))["roi_extractor"]
    assert [row["iou_threshold"] for row in rows] == [0.0, 0.2, 0.4]
    assert rows[0]["recall"] >= rows[1]["recall"] >= rows[2]["recall"]
    table = capsys.readouterr().out
    assert "Precision" in table and len(table.strip().splitlines()) == 5


def test_evaluate_reference_classifiers(workspace, tmp_path):
    _, config, data, _ = workspace
    out = tmp_path / "oracle.json"
    assert _cli(config, "evaluate", "--in", str(data), "--out", str(out), "--classifier", "oracle") == 0
    report = json.loads(out.read_text(encoding="utf-8"))["framework"][0]
    assert report["classifier"] == "oracle"
    assert report["recall"] <= report["roi_recall"]
    out = tmp_path / "none.json"
    assert _cli(config, "evaluate", "--in", str(data), "--out", str(out), "--classifier", "none") == 0
    report = json.loads(out.read_text(encoding="utf-8"))["framework"][0]
    assert report["recall"] == 0.0 and report["precision"] == 0.0


def test_render(workspace, tmp_path):
    _, config, data, _ = workspace
    out = tmp_path / "png"
    assert _cli(config, "render", "--in", str(data), "--out", str(out), "--split", "test", "--stages") == 0
    assert len(list(out.glob("echo_*_consensus.png"))) == 3
    assert (out / RUN_MANIFEST).exists()


def test_render_channel_by_name(workspace, tmp_path):
    _, config, data, _ = workspace
    single = str(data / "echo_0000.ech")
    assert _cli(config, "render", "--in", single, "--out", str(tmp_path / "name"), "--channel", "125kHz") == 0
    assert _cli(config, "render", "--in", single, "--out", str(tmp_path / "index"), "--channel", "1") == 0
    assert (tmp_path / "name" / "echo_0000.png").read_bytes() == (tmp_path / "index" / "echo_0000.png").read_bytes()
    assert _cli(config, "render", "--in", single, "--out", str(tmp_path / "bad"), "--channel", "9kHz") == 2


def test_usage_errors_exit_1(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "x"), "--n", "0"]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["extract", "--in", "a"]) == 1
    assert not (tmp_path / "x").exists()


def test_data_errors_exit_2(tmp_path):
    assert main(["extract", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "r.json")]) == 2
    bad = tmp_path / "bad.ech"
    bad.write_bytes(b"not an echogram")
    assert main(["extract", "--in", str(bad), "--out", str(tmp_path / "r.json")]) == 2
    broken = tmp_path / "broken.yaml"
    broken.write_text("roi:\n  median_len: 4\n", encoding="utf-8")
    assert main(["--config", str(broken), "extract", "--in", str(bad), "--out", str(tmp_path / "r.json")]) == 2


def test_corrupt_model_exits_2(workspace, tmp_path):
    _, config, data, samples = workspace
    model = tmp_path / "cnn.model"
    assert _cli(config, "train", "--samples", str(samples), "--model", "cnn", "--out", str(model)) == 0
    blob = model.read_bytes()
    # conv1_w 的四维形状改写为同样元素数的三维
    head = 4 + 2 + 1 + 4
    c_out, c_in, k, _ = struct.unpack("<4I", blob[head + 1 : head + 17])
    bad = tmp_path / "bad.model"
    bad.write_bytes(blob[:head] + struct.pack("<B3I", 3, c_out, c_in, k * k) + blob[head + 17 :])
    out = tmp_path / "dets.json"
    assert _cli(config, "detect", "--in", str(data), "--model", str(bad), "--out", str(out)) == 2
    assert not out.exists()
