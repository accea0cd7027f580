from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from .errors import DataError

# 二值掩膜与得分矩阵直接使用 numpy 数组，形状均为 (height, width)
BinaryMask = npt.NDArray[np.bool_]
ScoreMatrix = npt.NDArray[np.uint8]

HERRING = "herring-school"
BACKGROUND = "background"
LABELS = (HERRING, BACKGROUND)


@dataclass(frozen=True, order=True)
class BoundingBox:
    """像素坐标系下的轴对齐矩形，原点在左上角。"""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 1 or self.h < 1:
            raise DataError(f"包围盒宽高必须 >= 1：{self}")
        if self.x < 0 or self.y < 0:
            raise DataError(f"包围盒左上角不能为负：{self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def fits(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    def as_list(self) -> List[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Annotation:
    box: BoundingBox
    label: str = HERRING

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise DataError(f"未知类别标签：{self.label!r}")


def channel_name(frequency_khz: float) -> str:
    return f"{frequency_khz:g}kHz"


def _as_f32(value: float) -> float:
    return float(np.float32(value))


@dataclass(frozen=True, eq=False)
class Echogram:
    """多频回波图。data 形状为 (n_channels, height, width)，单位 dB，float32。

    标量元数据按文件头的 32 位精度保存，读写往返保持一致。
    """

    data: npt.NDArray[np.float32]
    frequencies_khz: Tuple[float, ...]
    depth_min_m: float = 0.0
    depth_max_m: float = 50.0
    start_epoch_s: int = 0
    duration_s: float = 3600.0
    channels: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32, order="C")
        if data.ndim != 3:
            raise DataError(f"回波图数据必须是三维数组 (C, H, W)，当前维度 {data.ndim}")
        n_channels, height, width = data.shape
        if n_channels < 1 or height < 1 or width < 1:
            raise DataError(f"回波图尺寸非法：{data.shape}")
        freqs = tuple(_as_f32(f) for f in self.frequencies_khz)
        channels = tuple(self.channels) or tuple(channel_name(f) for f in freqs)
        if len(channels) != n_channels or len(freqs) != n_channels:
            raise DataError("通道名、频率数量与数据通道数不一致")
        if any(f <= 0 for f in freqs) or any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise DataError(f"频率必须为正且严格递增：{freqs}")
        if not self.depth_min_m < self.depth_max_m:
            raise DataError(f"深度范围非法：{self.depth_min_m} >= {self.depth_max_m}")
        if not np.isfinite(data).all():
            raise DataError("回波图包含非有限值")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "frequencies_khz", freqs)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "depth_min_m", _as_f32(self.depth_min_m))
        object.__setattr__(self, "depth_max_m", _as_f32(self.depth_max_m))
        object.__setattr__(self, "duration_s", _as_f32(self.duration_s))
        object.__setattr__(self, "start_epoch_s", int(self.start_epoch_s))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def channel_index(self, channel: str | int) -> int:
        if isinstance(channel, int):
            if 0 <= channel < self.n_channels:
                return channel
        elif channel in self.channels:
            return self.channels.index(channel)
        raise DataError(f"回波图中不存在通道 {channel!r}，可选：{list(self.channels)}")

    def same_as(self, other: "Echogram") -> bool:
        return (
            self.channels == other.channels
            and self.frequencies_khz == other.frequencies_khz
            and self.depth_min_m == other.depth_min_m
            and self.depth_max_m == other.depth_max_m
            and self.start_epoch_s == other.start_epoch_s
            and self.duration_s == other.duration_s
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class LabeledRegion:
    pixel_count: int
    centroid: Tuple[float, float]
    central_moments: Tuple[float, float, float]
    orientation_deg: float
    box: BoundingBox
    # 成员像素坐标 (ys, xs)，用于特征计算
    pixels: Tuple[npt.NDArray[np.intp], npt.NDArray[np.intp]] = field(repr=False, compare=False)


@dataclass(frozen=True)
class FeatureVector:
    mean_intensity: float
    eccentricity: float
    circularity: float

    def __post_init__(self) -> None:
        values = self.as_array()
        if not np.isfinite(values).all():
            raise DataError(f"特征包含非有限值：{self}")

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.array([self.mean_intensity, self.eccentricity, self.circularity], dtype=np.float64)


POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True, eq=False)
class Sample:
    crop: npt.NDArray[np.float64]
    label: str
    source_box: BoundingBox
    iou_with_gt: float
    features: Optional[FeatureVector] = None
    echogram_id: str = ""
    split: str = "train"

    @property
    def positive(self) -> bool:
        return self.label == POSITIVE


@dataclass(frozen=True)
class RoiLabel:
    box: BoundingBox
    label: str
    best_iou: float


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        # 聚合只累加计数，配对索引在跨回波图时没有意义
        return MatchResult(tp=self.tp + other.tp, fp=self.fp + other.fp, fn=self.fn + other.fn)


@dataclass(frozen=True)
class MetricRow:
    iou_threshold: float
    precision: float
    recall: float
    f1: float

    def __post_init__(self) -> None:
        for name in ("precision", "recall", "f1"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0) or math.isnan(value):
                raise DataError(f"{name} 超出 [0, 1]：{value}")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    input_paths: List[str]
    seed: Optional[int]
    tool_version: str
    output_paths: List[str]
    duration_s: float
    extra: Dict[str, object] = field(default_factory=dict)
