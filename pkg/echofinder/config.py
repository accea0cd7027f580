from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .errors import ConfigError

THREADS_ENV = "ECHOFINDER_THREADS"


@dataclass
class NormalizationConfig:
    lo_db: float = -90.0
    hi_db: float = -30.0

    def validate(self) -> None:
        if not self.lo_db < self.hi_db:
            raise ConfigError(f"normalization.lo_db 必须小于 hi_db：{self.lo_db} >= {self.hi_db}")


@dataclass
class RoiConfig:
    median_len: int = 5
    thresh_window: int = 61
    thresh_offset: float = 0.15
    morph_radius: int = 1
    min_consensus: int = 3
    min_area_px: int = 50
    min_orientation_deg: float = 60.0

    def validate(self, n_channels: Optional[int] = None) -> None:
        if self.median_len < 1 or self.median_len % 2 == 0:
            raise ConfigError(f"roi.median_len 必须为正奇数：{self.median_len}")
        if self.thresh_window < 3 or self.thresh_window % 2 == 0:
            raise ConfigError(f"roi.thresh_window 必须为 >= 3 的奇数：{self.thresh_window}")
        if not 0.0 < self.thresh_offset < 1.0:
            raise ConfigError(f"roi.thresh_offset 必须在 (0, 1) 内：{self.thresh_offset}")
        if self.morph_radius < 1:
            raise ConfigError(f"roi.morph_radius 必须 >= 1：{self.morph_radius}")
        upper = n_channels if n_channels is not None else self.min_consensus
        if not 1 <= self.min_consensus <= upper:
            raise ConfigError(f"roi.min_consensus 必须在 [1, {upper}] 内：{self.min_consensus}")
        if self.min_area_px < 1:
            raise ConfigError(f"roi.min_area_px 必须 >= 1：{self.min_area_px}")
        if not 0.0 <= self.min_orientation_deg <= 90.0:
            raise ConfigError(f"roi.min_orientation_deg 必须在 [0, 90] 内：{self.min_orientation_deg}")


@dataclass
class SynthConfig:
    width: int = 1200
    height: int = 571
    frequencies_khz: List[float] = field(default_factory=lambda: [67.0, 125.0, 200.0, 455.0])
    depth_min_m: float = 0.0
    depth_max_m: float = 50.0
    duration_s: float = 3600.0
    start_epoch_s: int = 1430438400  # 2015-05-01T00:00:00Z
    noise_mean_db: float = -62.0
    noise_sigma_db: float = 3.0
    n_schools: Tuple[int, int] = (1, 4)
    school_height_px: Tuple[int, int] = (60, 200)
    school_width_px: Tuple[int, int] = (10, 40)
    school_intensity_db: Tuple[float, float] = (20.0, 35.0)
    consensus_channels: int = 4
    # 只出现在少数通道中的诱饵鱼群，不标注，应被通道一致性规则剔除
    n_decoys: Tuple[int, int] = (0, 1)
    decoy_channels: int = 2
    # 形状与鲱鱼群相同、频率响应随频率升高而增强的鱼群（如浮游动物），不标注
    n_lookalikes: Tuple[int, int] = (1, 2)
    # 最低频通道强度乘以 (1 - t)，最高频乘以 (1 + t)，中间线性过渡
    lookalike_tilt: Tuple[float, float] = (0.3, 0.5)
    # 从海面向下延伸的纹理气泡柱，不标注，作为分类阶段的负样本来源
    n_plumes: Tuple[int, int] = (1, 4)
    plume_height_px: Tuple[int, int] = (60, 180)
    plume_width_px: Tuple[int, int] = (4, 10)
    plume_intensity_db: Tuple[float, float] = (18.0, 30.0)
    # 气泡柱逐行强度起伏幅度，0 表示均匀
    plume_texture: float = 0.5
    # 气泡柱低频强、高频弱：最低频乘以 (1 + t)，最高频乘以 (1 - t)
    plume_tilt: float = 0.3
    n_clutter: int = 400
    clutter_size_px: Tuple[int, int] = (1, 4)
    clutter_intensity_db: Tuple[float, float] = (10.0, 25.0)
    max_attempts: int = 1000
    seed: int = 7

    @property
    def n_channels(self) -> int:
        return len(self.frequencies_khz)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"synth 尺寸必须为正：{self.width}x{self.height}")
        freqs = self.frequencies_khz
        if not freqs or any(f <= 0 for f in freqs) or any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ConfigError(f"synth.frequencies_khz 必须非空、为正且严格递增：{freqs}")
        if self.noise_sigma_db < 0:
            raise ConfigError("synth.noise_sigma_db 不能为负")
        for name in (
            "n_schools",
            "school_height_px",
            "school_width_px",
            "school_intensity_db",
            "n_decoys",
            "n_lookalikes",
            "lookalike_tilt",
            "n_plumes",
            "plume_height_px",
            "plume_width_px",
            "plume_intensity_db",
            "clutter_size_px",
            "clutter_intensity_db",
        ):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"synth.{name} 区间非法：{(lo, hi)}")
        if self.school_width_px[0] < 1 or self.school_height_px[0] < 1:
            raise ConfigError("synth 鱼群尺寸必须为正")
        # 采样时宽度上限取 height / tan(60°)，这里保证区间不为空
        if self.school_height_px[0] <= math.tan(math.radians(60.0)) * self.school_width_px[0]:
            raise ConfigError("synth 鱼群高度下限必须大于 tan(60°) 乘以宽度下限，才能保证竖直伸长")
        if not 1 <= self.consensus_channels <= self.n_channels:
            raise ConfigError(f"synth.consensus_channels 必须在 [1, {self.n_channels}] 内")
        if not 1 <= self.decoy_channels <= self.n_channels:
            raise ConfigError(f"synth.decoy_channels 必须在 [1, {self.n_channels}] 内")
        if not 0.0 <= self.plume_texture <= 1.0:
            raise ConfigError("synth.plume_texture 必须在 [0, 1] 内")
        if not 0.0 <= self.plume_tilt < 1.0 or self.lookalike_tilt[1] >= 1.0:
            raise ConfigError("synth.plume_tilt 与 lookalike_tilt 必须在 [0, 1) 内")
        if self.school_intensity_db[0] <= 3.0 * self.noise_sigma_db:
            raise ConfigError("synth 鱼群强度下限必须高于 3 倍噪声标准差，否则无法定义标注框")
        if self.n_clutter < 0 or self.max_attempts < 1:
            raise ConfigError("synth.n_clutter / max_attempts 非法")


@dataclass
class MiningConfig:
    iou_threshold: float = 0.4
    neg_per_pos: float = 2.0
    crop_size: int = 32
    # 为 true 时把标注框本身也作为正样本加入；默认只用 ROI，与检测时的裁剪分布一致
    include_ground_truth: bool = False
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"mining.iou_threshold 必须在 [0, 1] 内：{self.iou_threshold}")
        if self.neg_per_pos < 0:
            raise ConfigError(f"mining.neg_per_pos 不能为负：{self.neg_per_pos}")
        if self.crop_size < 8:
            raise ConfigError(f"mining.crop_size 必须 >= 8：{self.crop_size}")


@dataclass
class LinearTrainConfig:
    epochs: int = 100
    lr: float = 0.1
    reg: float = 1e-3
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.lr < 0 or self.reg < 0:
            raise ConfigError(f"linear 训练参数非法：{self}")


@dataclass
class CnnTrainConfig:
    epochs: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    weight_decay: float = 1e-4
    conv1_filters: int = 8
    conv2_filters: int = 16
    hidden: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.lr < 0 or self.batch_size < 1 or self.weight_decay < 0:
            raise ConfigError(f"cnn 训练参数非法：{self}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"cnn.momentum 必须在 [0, 1) 内：{self.momentum}")
        if min(self.conv1_filters, self.conv2_filters, self.hidden) < 1:
            raise ConfigError("cnn 层宽度必须为正")


@dataclass
class EvaluationConfig:
    iou_thresholds: List[float] = field(default_factory=lambda: [0.0, 0.2, 0.4])
    framework_iou: float = 0.4

    def validate(self) -> None:
        taus = self.iou_thresholds
        if any(not 0.0 <= t <= 1.0 for t in taus) or list(taus) != sorted(taus):
            raise ConfigError(f"evaluation.iou_thresholds 必须升序且位于 [0, 1]：{taus}")
        if not 0.0 <= self.framework_iou <= 1.0:
            raise ConfigError(f"evaluation.framework_iou 必须在 [0, 1] 内：{self.framework_iou}")


@dataclass
class RenderConfig:
    # 通道序号或通道名
    channel: int | str = 0
    colormap: str = "viridis"


@dataclass
class Config:
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)
    roi: RoiConfig = field(default_factory=RoiConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    linear: LinearTrainConfig = field(default_factory=LinearTrainConfig)
    cnn: CnnTrainConfig = field(default_factory=CnnTrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    def validate(self) -> None:
        self.normalization.validate()
        self.roi.validate()
        self.synth.validate()
        self.mining.validate()
        self.linear.validate()
        self.cnn.validate()
        self.evaluation.validate()


_SECTIONS = {
    "normalization": NormalizationConfig,
    "roi": RoiConfig,
    "synth": SynthConfig,
    "mining": MiningConfig,
    "linear": LinearTrainConfig,
    "cnn": CnnTrainConfig,
    "evaluation": EvaluationConfig,
    "render": RenderConfig,
}


def _load_raw_config(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as handle:
        content = handle.read()
    try:
        if path.endswith(".json"):
            return json.loads(content) or {}
        # 默认按 YAML 解析
        return yaml.safe_load(content) or {}
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"配置文件 {path} 解析失败：{exc}") from exc


def _merge(a: Dict[str, Any], b: Dict[str, Any]) -> Dict[str, Any]:
    result = dict(a)
    for key, value in b.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = _merge(result[key], value)
        else:
            result[key] = value
    return result


def _build_section(name: str, data: Any):
    cls = _SECTIONS[name]
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置段 {name} 必须是映射，当前为 {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"配置段 {name} 含未知字段：{unknown}")
    values = {}
    for key, value in data.items():
        default = getattr(cls(), key)
        # YAML 中的区间写成列表，统一转换为元组
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        values[key] = value
    return cls(**values)


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Config:
    raw = _load_raw_config(path) if path else {}
    if not isinstance(raw, dict):
        raise ConfigError(f"配置文件顶层必须是映射：{path}")
    raw = _merge(raw, overrides or {})
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"配置含未知配置段：{unknown}")
    config = Config(**{name: _build_section(name, raw.get(name)) for name in _SECTIONS})
    config.validate()
    return config


def config_hash(config: Config) -> str:
    canonical = json.dumps(dataclasses.asdict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_threads(environ: Optional[Dict[str, str]] = None) -> int:
    env = os.environ if environ is None else environ
    raw = env.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} 需要为正整数，当前值：{raw!r}")
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} 需要为正整数，当前值：{raw!r}")
    return threads
