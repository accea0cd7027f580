from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, List, Union

import numpy as np

from .cnn import PARAM_NAMES, CnnModel
from .errors import CorruptModelError, DataError, ModelVersionError, ShapeMismatchError
from .linear import LinearModel

MAGIC = b"EMDL"
VERSION = 1
KIND_LINEAR = 0
KIND_CNN = 1

Model = Union[LinearModel, CnnModel]

# magic, version, kind, n_tensors
_HEAD = struct.Struct("<4sHBI")


def model_kind(model: Model) -> str:
    return "linear" if isinstance(model, LinearModel) else "cnn"


def _tensors(model: Model) -> List[np.ndarray]:
    if isinstance(model, LinearModel):
        return [model.weights, np.array([model.bias]), model.feature_means, model.feature_scales]
    return [model.params[name] for name in PARAM_NAMES]


def encode_model(model: Model) -> bytes:
    tensors = _tensors(model)
    kind = KIND_LINEAR if isinstance(model, LinearModel) else KIND_CNN
    out = io.BytesIO()
    out.write(_HEAD.pack(MAGIC, VERSION, kind, len(tensors)))
    for tensor in tensors:
        out.write(struct.pack("<B", tensor.ndim))
        out.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
    for tensor in tensors:
        out.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return out.getvalue()


def write_model(model: Model, sink: BinaryIO) -> int:
    blob = encode_model(model)
    sink.write(blob)
    return len(blob)


def _read(source: BinaryIO, size: int, what: str) -> bytes:
    data = source.read(size)
    if len(data) != size:
        raise CorruptModelError(f"模型文件{what}被截断：需要 {size} 字节，只读到 {len(data)} 字节")
    return data


def read_model(source: BinaryIO) -> Model:
    magic, version, kind, n_tensors = _HEAD.unpack(_read(source, _HEAD.size, "头部"))
    if magic != MAGIC:
        raise CorruptModelError(f"模型文件标识错误：{magic!r}")
    if version != VERSION:
        raise ModelVersionError(f"不支持的模型版本：{version}")
    if kind not in (KIND_LINEAR, KIND_CNN):
        raise CorruptModelError(f"未知模型类型：{kind}")
    expected = 4 if kind == KIND_LINEAR else len(PARAM_NAMES)
    if n_tensors != expected:
        raise CorruptModelError(f"张量数量 {n_tensors} 与模型类型不符（应为 {expected}）")
    shapes = []
    for _ in range(n_tensors):
        (ndim,) = struct.unpack("<B", _read(source, 1, "形状表"))
        shapes.append(struct.unpack(f"<{ndim}I", _read(source, 4 * ndim, "形状表")))
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        raw = _read(source, 4 * count, "张量数据")
        tensors.append(np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape))
    if source.read(1):
        raise CorruptModelError("模型文件末尾存在多余字节")
    try:
        if kind == KIND_LINEAR:
            weights, bias, means, scales = tensors
            if bias.shape != (1,):
                raise ShapeMismatchError(f"偏置形状非法：{bias.shape}")
            return LinearModel(weights=weights, bias=float(bias[0]), feature_means=means, feature_scales=scales)
        return CnnModel(dict(zip(PARAM_NAMES, tensors)))
    except ShapeMismatchError as exc:
        raise CorruptModelError(f"模型张量形状不连贯：{exc}") from exc


def save_model(model: Model, path: str | Path) -> int:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("wb") as handle:
        return write_model(model, handle)


def load_model(path: str | Path) -> Model:
    try:
        with Path(path).open("rb") as handle:
            return read_model(handle)
    except DataError:
        raise
    except struct.error as exc:
        raise CorruptModelError(f"模型文件 {path} 解析失败：{exc}") from exc
