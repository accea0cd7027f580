from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, List, Optional

import numpy as np

from .errors import (
    AnnotationFormatError,
    BadMagicError,
    BoxOutOfBoundsError,
    DataError,
    NonFiniteValueError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .models import HERRING, LABELS, Annotation, BoundingBox, Echogram

MAGIC = b"ECHO"
VERSION = 1

# magic, version, width, height, n_channels
_HEAD = struct.Struct("<4sHIII")
# depth_min_m, depth_max_m, start_epoch_s, duration_s
_TAIL = struct.Struct("<ffqf")


def header_size(n_channels: int) -> int:
    return _HEAD.size + 4 * n_channels + _TAIL.size


def payload_size(width: int, height: int, n_channels: int) -> int:
    return 4 * width * height * n_channels


def encode_echogram(echogram: Echogram) -> bytes:
    head = _HEAD.pack(MAGIC, VERSION, echogram.width, echogram.height, echogram.n_channels)
    freqs = np.asarray(echogram.frequencies_khz, dtype="<f4").tobytes()
    tail = _TAIL.pack(
        echogram.depth_min_m,
        echogram.depth_max_m,
        echogram.start_epoch_s,
        echogram.duration_s,
    )
    # 通道优先、行优先，小端 float32
    payload = np.ascontiguousarray(echogram.data, dtype="<f4").tobytes()
    return head + freqs + tail + payload


def write_echogram(echogram: Echogram, sink: BinaryIO) -> int:
    blob = encode_echogram(echogram)
    sink.write(blob)
    return len(blob)


def _read_exact(source: BinaryIO, size: int, what: str) -> bytes:
    data = source.read(size)
    if len(data) != size:
        raise TruncatedPayloadError(f"{what} 被截断：需要 {size} 字节，只读到 {len(data)} 字节")
    return data


def read_echogram(source: BinaryIO) -> Echogram:
    magic, version, width, height, n_channels = _HEAD.unpack(_read_exact(source, _HEAD.size, "文件头"))
    if magic != MAGIC:
        raise BadMagicError(f"文件标识错误：期望 {MAGIC!r}，实际 {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"不支持的格式版本：{version}")
    if n_channels < 1 or width < 1 or height < 1:
        raise DataError(f"文件头尺寸非法：{width}x{height}x{n_channels}")
    freqs = np.frombuffer(_read_exact(source, 4 * n_channels, "频率表"), dtype="<f4")
    depth_min, depth_max, start_epoch, duration = _TAIL.unpack(_read_exact(source, _TAIL.size, "文件头"))
    expected = payload_size(width, height, n_channels)
    payload = _read_exact(source, expected, "数据区")
    if source.read(1):
        raise DataError("数据区之后存在多余字节")
    data = np.frombuffer(payload, dtype="<f4").reshape(n_channels, height, width)
    if not np.isfinite(data).all():
        bad = int(np.count_nonzero(~np.isfinite(data)))
        raise NonFiniteValueError(f"数据区包含 {bad} 个非有限值")
    return Echogram(
        data=data.astype(np.float32),
        frequencies_khz=tuple(float(f) for f in freqs),
        depth_min_m=depth_min,
        depth_max_m=depth_max,
        start_epoch_s=start_epoch,
        duration_s=duration,
    )


def save_echogram(echogram: Echogram, path: str | Path) -> int:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("wb") as handle:
        return write_echogram(echogram, handle)


def load_echogram(path: str | Path) -> Echogram:
    with Path(path).open("rb") as handle:
        return read_echogram(handle)


@dataclass
class AnnotationFile:
    echogram_id: str
    annotations: List[Annotation]

    def boxes(self, label: Optional[str] = None) -> List[BoundingBox]:
        return [a.box for a in self.annotations if label is None or a.label == label]


_ANNOTATION_KEYS = {"x", "y", "w", "h", "label"}


def _parse_annotation(item: object, index: int) -> Annotation:
    if not isinstance(item, dict):
        raise AnnotationFormatError(f"第 {index} 条标注必须是对象")
    keys = set(item)
    if keys != _ANNOTATION_KEYS:
        raise AnnotationFormatError(
            f"第 {index} 条标注字段不符：缺少 {sorted(_ANNOTATION_KEYS - keys)}，多余 {sorted(keys - _ANNOTATION_KEYS)}"
        )
    coords = [item[k] for k in ("x", "y", "w", "h")]
    if any(isinstance(v, bool) or not isinstance(v, int) for v in coords):
        raise AnnotationFormatError(f"第 {index} 条标注坐标必须为整数：{coords}")
    if item["label"] not in LABELS:
        raise AnnotationFormatError(f"第 {index} 条标注类别未知：{item['label']!r}")
    try:
        box = BoundingBox(*coords)
    except DataError as exc:
        raise AnnotationFormatError(f"第 {index} 条标注非法：{exc}") from exc
    return Annotation(box=box, label=item["label"])


def parse_annotations(text: str) -> AnnotationFile:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f"标注文件不是合法 JSON：{exc}") from exc
    if not isinstance(raw, dict) or set(raw) != {"echogram_id", "annotations"}:
        raise AnnotationFormatError("标注文件顶层必须且只能包含 echogram_id 与 annotations")
    if not isinstance(raw["echogram_id"], str) or not isinstance(raw["annotations"], list):
        raise AnnotationFormatError("echogram_id 必须是字符串，annotations 必须是列表")
    return AnnotationFile(
        echogram_id=raw["echogram_id"],
        annotations=[_parse_annotation(item, i) for i, item in enumerate(raw["annotations"])],
    )


def dump_annotations(annotation_file: AnnotationFile) -> str:
    data: Dict[str, object] = {
        "echogram_id": annotation_file.echogram_id,
        "annotations": [
            {"x": a.box.x, "y": a.box.y, "w": a.box.w, "h": a.box.h, "label": a.label}
            for a in annotation_file.annotations
        ],
    }
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def read_annotations(path: str | Path, echogram: Optional[Echogram] = None) -> AnnotationFile:
    result = parse_annotations(Path(path).read_text(encoding="utf-8"))
    if echogram is not None:
        validate_annotations(result, echogram)
    return result


def write_annotations(annotation_file: AnnotationFile, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(dump_annotations(annotation_file), encoding="utf-8")


def validate_annotations(annotation_file: AnnotationFile, echogram: Echogram) -> None:
    for index, annotation in enumerate(annotation_file.annotations):
        if not annotation.box.fits(echogram.width, echogram.height):
            raise BoxOutOfBoundsError(
                f"{annotation_file.echogram_id} 第 {index} 条标注 {annotation.box} 超出回波图 "
                f"{echogram.width}x{echogram.height}"
            )


DATASET_MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetEntry:
    echogram_id: str
    split: str
    seed: int
    echogram: str
    annotations: str


@dataclass
class LoadedEchogram:
    echogram_id: str
    split: str
    echogram: Echogram
    annotations: AnnotationFile

    @property
    def gt(self) -> List[BoundingBox]:
        return self.annotations.boxes(HERRING)


def read_manifest(root: str | Path) -> List[DatasetEntry]:
    """读取数据集目录下的 manifest.json；缺字段或划分标签未知时报 DataError。"""
    path = Path(root) / DATASET_MANIFEST
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"数据集清单 {path} 不是合法 JSON：{exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("echograms"), list):
        raise DataError(f"数据集清单 {path} 缺少 echograms 列表")
    entries = []
    for index, item in enumerate(raw["echograms"]):
        try:
            entry = DatasetEntry(
                echogram_id=str(item["echogram_id"]),
                split=str(item["split"]),
                seed=int(item["seed"]),
                echogram=str(item["echogram"]),
                annotations=str(item["annotations"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"数据集清单第 {index} 项格式错误：{exc}") from exc
        if entry.split not in SPLITS:
            raise DataError(f"数据集清单第 {index} 项划分未知：{entry.split!r}")
        entries.append(entry)
    return entries


def load_entry(root: str | Path, entry: DatasetEntry) -> LoadedEchogram:
    base = Path(root)
    echogram = load_echogram(base / entry.echogram)
    annotations = read_annotations(base / entry.annotations, echogram)
    if annotations.echogram_id != entry.echogram_id:
        raise AnnotationFormatError(
            f"标注文件 {entry.annotations} 的 echogram_id {annotations.echogram_id!r} 与清单 {entry.echogram_id!r} 不一致"
        )
    return LoadedEchogram(entry.echogram_id, entry.split, echogram, annotations)


def load_dataset(root: str | Path, split: Optional[str] = None) -> List[LoadedEchogram]:
    """按清单顺序加载回波图及标注，split 为 None 时加载全部。"""
    if split is not None and split not in SPLITS:
        raise DataError(f"未知划分：{split!r}，可选 {SPLITS}")
    return [load_entry(root, e) for e in read_manifest(root) if split is None or e.split == split]
