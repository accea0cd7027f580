from __future__ import annotations

import io
import json

import numpy as np
import pytest

from echofinder.echogram_io import (
    AnnotationFile,
    dump_annotations,
    encode_echogram,
    header_size,
    load_dataset,
    load_echogram,
    parse_annotations,
    payload_size,
    read_annotations,
    read_echogram,
    read_manifest,
    save_echogram,
    validate_annotations,
    write_annotations,
    write_echogram,
)
from echofinder.errors import (
    AnnotationFormatError,
    BadMagicError,
    BoxOutOfBoundsError,
    DataError,
    NonFiniteValueError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from echofinder.models import BACKGROUND, HERRING, Annotation, BoundingBox


def test_sizes(make_echogram):
    e = make_echogram(np.zeros((1, 1, 1)))
    sink = io.BytesIO()
    assert write_echogram(e, sink) == header_size(1) + 4
    assert len(sink.getvalue()) == header_size(1) + 4
    assert payload_size(1200, 571, 4) == 10_963_200
    assert header_size(4) == 38 + 16


def test_round_trip_random_echograms(make_echogram):
    rng = np.random.default_rng(0)
    for _ in range(20):
        c, h, w = (int(v) for v in rng.integers(1, 6, size=3))
        e = make_echogram(
            rng.normal(-60, 10, size=(c, h, w)),
            frequencies=tuple(float(10 * (i + 1)) for i in range(c)),
            depth_min_m=1.5,
            depth_max_m=42.25,
            start_epoch_s=int(rng.integers(0, 2**40)),
            duration_s=1800.0,
        )
        blob = encode_echogram(e)
        back = read_echogram(io.BytesIO(blob))
        assert back.same_as(e)
        assert encode_echogram(back) == blob


def test_layout_is_channel_then_row_major(make_echogram):
    data = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    e = make_echogram(data, frequencies=(38.0, 120.0))
    blob = encode_echogram(e)
    payload = np.frombuffer(blob[header_size(2) :], dtype="<f4")
    assert payload.tolist() == list(range(12))
    assert blob[:4] == b"ECHO"


def test_bad_magic(make_echogram):
    blob = bytearray(encode_echogram(make_echogram(np.zeros((1, 2, 2)))))
    blob[:4] = b"XCHO"
    with pytest.raises(BadMagicError):
        read_echogram(io.BytesIO(bytes(blob)))


def test_unsupported_version(make_echogram):
    blob = bytearray(encode_echogram(make_echogram(np.zeros((1, 2, 2)))))
    blob[4:6] = (2).to_bytes(2, "little")
    with pytest.raises(UnsupportedVersionError):
        read_echogram(io.BytesIO(bytes(blob)))


def test_truncated_payload(make_echogram):
    blob = encode_echogram(make_echogram(np.zeros((1, 2, 2))))
    with pytest.raises(TruncatedPayloadError):
        read_echogram(io.BytesIO(blob[:-4]))
    with pytest.raises(TruncatedPayloadError):
        read_echogram(io.BytesIO(blob[:10]))


def test_trailing_bytes_rejected(make_echogram):
    blob = encode_echogram(make_echogram(np.zeros((1, 2, 2))))
    with pytest.raises(DataError):
        read_echogram(io.BytesIO(blob + b"\0"))


def test_non_finite_payload(make_echogram):
    blob = bytearray(encode_echogram(make_echogram(np.zeros((1, 2, 2)))))
    blob[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    with pytest.raises(NonFiniteValueError):
        read_echogram(io.BytesIO(bytes(blob)))


def test_echogram_invariants(make_echogram):
    with pytest.raises(DataError):
        make_echogram(np.zeros((2, 2, 2)), frequencies=(200.0, 100.0))
    with pytest.raises(DataError):
        make_echogram(np.zeros((1, 2, 2)), depth_min_m=10.0, depth_max_m=5.0)
    with pytest.raises(DataError):
        make_echogram(np.full((1, 2, 2), np.inf))


def test_file_round_trip(tmp_path, make_echogram):
    e = make_echogram(np.ones((4, 3, 5)) * -55.0)
    path = tmp_path / "a.ech"
    save_echogram(e, path)
    assert path.stat().st_size == header_size(4) + payload_size(5, 3, 4)
    assert load_echogram(path).same_as(e)


def test_annotations_round_trip(tmp_path):
    empty = AnnotationFile("e0", [])
    assert parse_annotations(dump_annotations(empty)) == empty
    one = AnnotationFile("e1", [Annotation(BoundingBox(10, 20, 30, 40), HERRING)])
    path = tmp_path / "a.json"
    write_annotations(one, path)
    assert read_annotations(path) == one
    assert one.boxes() == [BoundingBox(10, 20, 30, 40)]
    assert one.boxes(BACKGROUND) == []


@pytest.mark.parametrize(
    "item",
    [
        {"x": 0, "y": 0, "w": -3, "h": 4, "label": HERRING},
        {"x": 0, "y": 0, "w": 3, "h": 4, "label": "cod"},
        {"x": 0, "y": 0, "w": 3, "h": 4},
        {"x": 0, "y": 0, "w": 3, "h": 4, "label": HERRING, "score": 0.9},
        {"x": 0.5, "y": 0, "w": 3, "h": 4, "label": HERRING},
        {"x": True, "y": 0, "w": 3, "h": 4, "label": HERRING},
    ],
)
def test_invalid_annotations(item):
    with pytest.raises(AnnotationFormatError):
        parse_annotations(json.dumps({"echogram_id": "e", "annotations": [item]}))


def test_annotation_top_level_checked():
    with pytest.raises(AnnotationFormatError):
        parse_annotations("{not json")
    with pytest.raises(AnnotationFormatError):
        parse_annotations(json.dumps({"echogram_id": "e", "annotations": [], "extra": 1}))


def test_out_of_bounds_annotation(make_echogram):
    e = make_echogram(np.zeros((1, 10, 10)))
    af = AnnotationFile("e", [Annotation(BoundingBox(5, 5, 6, 2))])
    with pytest.raises(BoxOutOfBoundsError):
        validate_annotations(af, e)


def test_dataset_loading(tmp_path, make_echogram):
    e = make_echogram(np.zeros((1, 4, 4)))
    save_echogram(e, tmp_path / "echo_0000.ech")
    write_annotations(AnnotationFile("echo_0000", [Annotation(BoundingBox(0, 0, 2, 2))]), tmp_path / "echo_0000.json")
    manifest = {
        "seed": 1,
        "echograms": [
            {
                "echogram_id": "echo_0000",
                "split": "val",
                "seed": 5,
                "echogram": "echo_0000.ech",
                "annotations": "echo_0000.json",
            }
        ],
    }
    (tmp_path / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")
    assert [entry.split for entry in read_manifest(tmp_path)] == ["val"]
    loaded = load_dataset(tmp_path)
    assert loaded[0].gt == [BoundingBox(0, 0, 2, 2)]
    assert load_dataset(tmp_path, "train") == []
    with pytest.raises(DataError):
        load_dataset(tmp_path, "holdout")
