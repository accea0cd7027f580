from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from echofinder.config import RoiConfig, SynthConfig
from echofinder.echogram_io import DATASET_MANIFEST, load_dataset
from echofinder.errors import ConfigError, DataError, PlacementError
from echofinder.evaluation import evaluate_rois
from echofinder.geometry import iou
from echofinder.models import HERRING
from echofinder.synth import (
    assign_splits,
    derive_seed,
    generate_dataset,
    generate_echogram,
    split_counts,
    splitmix64,
)


def test_splitmix64_reference_value():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert derive_seed(7, 0) != derive_seed(7, 1)
    assert derive_seed(7, 3) == derive_seed(7, 3)


@pytest.mark.parametrize(("n", "expected"), [(100, (56, 14, 30)), (10, (6, 1, 3)), (1, (1, 0, 0))])
def test_split_counts(n, expected):
    assert split_counts(n) == expected


def test_split_counts_reject_empty():
    with pytest.raises(DataError):
        split_counts(0)


def test_assign_splits_is_seeded():
    splits = assign_splits(20, 5)
    assert splits == assign_splits(20, 5)
    assert [splits.count(s) for s in ("train", "val", "test")] == list(split_counts(20))


def test_school_count_and_labels(small_synth):
    e, annotations = generate_echogram(replace(small_synth, n_schools=(3, 3)), np.random.default_rng(0))
    assert len(annotations) == 3
    assert all(a.label == HERRING for a in annotations)
    assert e.data.shape == (4, 160, 240)
    for a in annotations:
        assert a.box.fits(e.width, e.height)
        assert a.box.h > a.box.w


def test_no_schools(small_synth):
    _, annotations = generate_echogram(replace(small_synth, n_schools=(0, 0)), np.random.default_rng(1))
    assert annotations == []


def test_schools_never_overlap(small_synth):
    cfg = replace(small_synth, n_schools=(4, 4))
    for seed in range(10):
        _, annotations = generate_echogram(cfg, np.random.default_rng(seed))
        boxes = [a.box for a in annotations]
        for i, a in enumerate(boxes):
            for b in boxes[i + 1 :]:
                assert iou(a, b) == 0.0


def test_generation_is_deterministic(small_synth):
    a, ann_a = generate_echogram(small_synth, np.random.default_rng(42))
    b, ann_b = generate_echogram(small_synth, np.random.default_rng(42))
    assert a.same_as(b)
    assert ann_a == ann_b


def test_impossible_layout_raises():
    cfg = SynthConfig(
        width=20,
        height=100,
        n_schools=(3, 3),
        school_height_px=(60, 90),
        school_width_px=(9, 10),
        n_decoys=(0, 0),
        n_lookalikes=(0, 0),
        n_plumes=(0, 0),
        n_clutter=0,
        max_attempts=50,
    )
    with pytest.raises(PlacementError):
        generate_echogram(cfg, np.random.default_rng(0))


def test_schools_are_detectable(small_synth):
    dataset = []
    for seed in range(4):
        e, annotations = generate_echogram(small_synth, np.random.default_rng(seed))
        dataset.append((f"e{seed}", e, [a.box for a in annotations]))
    rows = evaluate_rois(dataset, RoiConfig(), [0.0])
    assert rows[0].recall >= 0.75


def test_dataset_regenerates_byte_identically(tmp_path, small_synth):
    first = tmp_path / "a"
    second = tmp_path / "b"
    generate_dataset(small_synth, 4, 11, first)
    generate_dataset(small_synth, 4, 11, second, workers=2)
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    assert len(names) == 9
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_dataset_manifest_and_loading(tmp_path, small_synth):
    records = generate_dataset(small_synth, 5, 3, tmp_path)
    manifest = json.loads((tmp_path / DATASET_MANIFEST).read_text(encoding="utf-8"))
    assert manifest["seed"] == 3
    assert [e["echogram_id"] for e in manifest["echograms"]] == [f"echo_{i:04d}" for i in range(5)]
    loaded = load_dataset(tmp_path)
    assert [item.split for item in loaded] == [r.split for r in records]
    starts = [item.echogram.start_epoch_s for item in loaded]
    assert starts == [small_synth.start_epoch_s + i * 3600 for i in range(5)]
    assert len(load_dataset(tmp_path, "train")) == split_counts(5)[0]


def _only(**counts):
    base = dict(n_schools=(0, 0), n_decoys=(0, 0), n_lookalikes=(0, 0), n_plumes=(0, 0), n_clutter=0)
    return replace(SynthConfig(), **{**base, **counts})


def test_lookalike_brightens_with_frequency():
    echogram, annotations = generate_echogram(_only(n_lookalikes=(1, 1)), np.random.default_rng(3))
    assert annotations == []
    means = echogram.data.mean(axis=(1, 2))
    assert (np.diff(means) > 0).all()


def test_plume_fades_with_frequency():
    echogram, annotations = generate_echogram(_only(n_plumes=(1, 1)), np.random.default_rng(4))
    assert annotations == []
    means = echogram.data.mean(axis=(1, 2))
    assert (np.diff(means) < 0).all()


def test_tilt_bounds_are_checked():
    with pytest.raises(ConfigError):
        replace(SynthConfig(), plume_tilt=1.0).validate()
    with pytest.raises(ConfigError):
        replace(SynthConfig(), lookalike_tilt=(0.3, 1.0)).validate()
