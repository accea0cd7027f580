"""合成多频回波图与鲱鱼群标注，用于在没有真实 AZFP 数据时做定量验证。

背景为逐通道独立的高斯 Sv 场；鱼群是竖直主轴的各向异性高斯强度峰，标注框取峰值
高于 noise_mean + 3 * noise_sigma 的像素范围。鲱鱼群在各通道强度相同。另外注入不标注的
干扰物：少通道诱饵鱼群，形状相同但强度随频率升高的仿鲱鱼群，低频偏强的海面气泡柱，
以及逐通道的小斑点杂波。
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import SynthConfig
from .echogram_io import DATASET_MANIFEST, AnnotationFile, DatasetEntry, save_echogram, write_annotations
from .errors import DataError, PlacementError
from .geometry import iou
from .models import HERRING, Annotation, BoundingBox, Echogram
from .parallel import run_ordered

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_TAN60 = math.tan(math.radians(60.0))
# 高斯峰在 4 个标准差之外的贡献可以忽略
_BUMP_EXTENT_SIGMAS = 4.0


def splitmix64(value: int) -> int:
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """由数据集种子与回波图序号导出子种子。"""
    return splitmix64(splitmix64(seed & _MASK64) ^ (index & _MASK64))


@dataclass(frozen=True)
class Bump:
    cx: float
    cy: float
    sigma_x: float
    sigma_y: float
    amplitude_db: float
    box: BoundingBox


def _bump_patch(bump: Bump, width: int, height: int) -> Tuple[slice, slice, np.ndarray]:
    ry = _BUMP_EXTENT_SIGMAS * bump.sigma_y
    rx = _BUMP_EXTENT_SIGMAS * bump.sigma_x
    y0, y1 = max(0, int(math.floor(bump.cy - ry))), min(height, int(math.ceil(bump.cy + ry)) + 1)
    x0, x1 = max(0, int(math.floor(bump.cx - rx))), min(width, int(math.ceil(bump.cx + rx)) + 1)
    ys = np.arange(y0, y1)[:, None]
    xs = np.arange(x0, x1)[None, :]
    values = bump.amplitude_db * np.exp(
        -((xs - bump.cx) ** 2) / (2.0 * bump.sigma_x**2) - ((ys - bump.cy) ** 2) / (2.0 * bump.sigma_y**2)
    )
    return slice(y0, y1), slice(x0, x1), values


def _sample_bump(cfg: SynthConfig, rng: np.random.Generator) -> Optional[Bump]:
    """采样一个鱼群形状并随机放置，返回 None 表示该次采样落空。"""
    level = 3.0 * cfg.noise_sigma_db
    amplitude = float(rng.uniform(*cfg.school_intensity_db))
    height = int(rng.integers(cfg.school_height_px[0], cfg.school_height_px[1] + 1))
    height = min(height, cfg.height)
    # 高宽比必须大于 tan(60°)
    max_width = min(cfg.school_width_px[1], int(math.ceil(height / _TAN60)) - 1)
    if max_width < cfg.school_width_px[0]:
        return None
    width = int(rng.integers(cfg.school_width_px[0], max_width + 1))
    reach = math.sqrt(2.0 * math.log(amplitude / level)) if level > 0 else _BUMP_EXTENT_SIGMAS
    sigma_y = 0.5 * height / reach
    sigma_x = 0.5 * width / reach
    if width > cfg.width or height > cfg.height:
        return None
    cy = float(rng.uniform(0.5 * height, cfg.height - 0.5 * height))
    cx = float(rng.uniform(0.5 * width, cfg.width - 0.5 * width))
    bump = Bump(cx=cx, cy=cy, sigma_x=sigma_x, sigma_y=sigma_y, amplitude_db=amplitude, box=BoundingBox(0, 0, 1, 1))
    rows, cols, values = _bump_patch(bump, cfg.width, cfg.height)
    ys, xs = np.nonzero(values > level)
    if ys.size == 0:
        return None
    box = BoundingBox(
        cols.start + int(xs.min()),
        rows.start + int(ys.min()),
        int(xs.max() - xs.min() + 1),
        int(ys.max() - ys.min() + 1),
    )
    return Bump(cx=cx, cy=cy, sigma_x=sigma_x, sigma_y=sigma_y, amplitude_db=amplitude, box=box)


def _disjoint(box: BoundingBox, others: Sequence[BoundingBox]) -> bool:
    return all(iou(box, other) == 0.0 for other in others)


def _place(cfg: SynthConfig, rng: np.random.Generator, taken: Sequence[BoundingBox]) -> Optional[Bump]:
    for _ in range(cfg.max_attempts):
        bump = _sample_bump(cfg, rng)
        if bump is not None and _disjoint(bump.box, taken):
            return bump
    return None


def _add_bump(data: np.ndarray, bump: Bump, channels: Sequence[int], gains: Optional[np.ndarray] = None) -> None:
    rows, cols, values = _bump_patch(bump, data.shape[2], data.shape[1])
    for c in channels:
        data[c, rows, cols] += values if gains is None else gains[c] * values


def _tilt(n_channels: int, t: float) -> np.ndarray:
    """逐通道强度系数，从最低频的 1 - t 线性升到最高频的 1 + t。"""
    if n_channels == 1:
        return np.ones(1)
    return 1.0 + t * np.linspace(-1.0, 1.0, n_channels)


def _pick_channels(rng: np.random.Generator, n_channels: int, count: int) -> List[int]:
    if count >= n_channels:
        return list(range(n_channels))
    return sorted(int(c) for c in rng.choice(n_channels, size=count, replace=False))


def _add_plume(cfg: SynthConfig, rng: np.random.Generator, data: np.ndarray, taken: Sequence[BoundingBox]) -> bool:
    for _ in range(cfg.max_attempts):
        height = min(int(rng.integers(cfg.plume_height_px[0], cfg.plume_height_px[1] + 1)), cfg.height)
        width = min(int(rng.integers(cfg.plume_width_px[0], cfg.plume_width_px[1] + 1)), cfg.width)
        x = int(rng.integers(0, cfg.width - width + 1))
        box = BoundingBox(x, 0, width, height)
        if not _disjoint(box, taken):
            continue
        amplitude = float(rng.uniform(*cfg.plume_intensity_db))
        # 逐行起伏的条纹纹理，强度随深度线性衰减
        rows = 1.0 - cfg.plume_texture * rng.uniform(0.0, 1.0, size=height)
        taper = np.linspace(1.0, 0.5, height)
        profile = (amplitude * rows * taper)[:, None]
        gains = _tilt(data.shape[0], -cfg.plume_tilt) * rng.uniform(0.9, 1.0, size=data.shape[0])
        for c in range(data.shape[0]):
            data[c, 0:height, x : x + width] += gains[c] * profile
        return True
    return False


def _add_clutter(cfg: SynthConfig, rng: np.random.Generator, data: np.ndarray) -> None:
    n_channels, height, width = data.shape
    for c in range(n_channels):
        for _ in range(cfg.n_clutter):
            size = int(rng.integers(cfg.clutter_size_px[0], cfg.clutter_size_px[1] + 1))
            size = max(1, min(size, height, width))
            y = int(rng.integers(0, height - size + 1))
            x = int(rng.integers(0, width - size + 1))
            data[c, y : y + size, x : x + size] += float(rng.uniform(*cfg.clutter_intensity_db))


def generate_echogram(
    cfg: SynthConfig, rng: np.random.Generator, start_epoch_s: Optional[int] = None
) -> Tuple[Echogram, List[Annotation]]:
    cfg.validate()
    n_channels = cfg.n_channels
    data = rng.normal(cfg.noise_mean_db, cfg.noise_sigma_db, size=(n_channels, cfg.height, cfg.width))
    n_schools = int(rng.integers(cfg.n_schools[0], cfg.n_schools[1] + 1))
    schools: List[Bump] = []
    for _ in range(n_schools):
        bump = _place(cfg, rng, [s.box for s in schools])
        if bump is None:
            raise PlacementError(f"{cfg.max_attempts} 次尝试后仍无法放置第 {len(schools) + 1} 个鱼群，配置过密")
        schools.append(bump)
        _add_bump(data, bump, _pick_channels(rng, n_channels, cfg.consensus_channels))
    taken = [s.box for s in schools]
    for _ in range(int(rng.integers(cfg.n_decoys[0], cfg.n_decoys[1] + 1))):
        decoy = _place(cfg, rng, taken)
        if decoy is None:
            logger.debug("诱饵鱼群放置失败，跳过")
            continue
        taken.append(decoy.box)
        _add_bump(data, decoy, _pick_channels(rng, n_channels, cfg.decoy_channels))
    for _ in range(int(rng.integers(cfg.n_lookalikes[0], cfg.n_lookalikes[1] + 1))):
        lookalike = _place(cfg, rng, taken)
        if lookalike is None:
            logger.debug("仿鲱鱼群放置失败，跳过")
            continue
        taken.append(lookalike.box)
        _add_bump(data, lookalike, range(n_channels), _tilt(n_channels, float(rng.uniform(*cfg.lookalike_tilt))))
    for _ in range(int(rng.integers(cfg.n_plumes[0], cfg.n_plumes[1] + 1))):
        if not _add_plume(cfg, rng, data, taken):
            logger.debug("气泡柱放置失败，跳过")
    _add_clutter(cfg, rng, data)
    echogram = Echogram(
        data=data.astype(np.float32),
        frequencies_khz=tuple(cfg.frequencies_khz),
        depth_min_m=cfg.depth_min_m,
        depth_max_m=cfg.depth_max_m,
        start_epoch_s=cfg.start_epoch_s if start_epoch_s is None else start_epoch_s,
        duration_s=cfg.duration_s,
    )
    return echogram, [Annotation(box=s.box, label=HERRING) for s in schools]


def split_counts(n: int) -> Tuple[int, int, int]:
    """返回 (train, val, test) 数量：训练 70%、测试 30%，训练内再按 80/20 拆出验证集，四舍五入时训练优先。"""
    if n < 1:
        raise DataError(f"回波图数量必须 >= 1：{n}")
    n_train_total = (7 * n + 5) // 10
    n_val = (2 * n_train_total + 4) // 10
    return n_train_total - n_val, n_val, n - n_train_total


def assign_splits(n: int, seed: int) -> List[str]:
    n_train, n_val, _ = split_counts(n)
    order = np.random.default_rng(splitmix64(seed & _MASK64)).permutation(n)
    splits = ["test"] * n
    for rank, index in enumerate(order):
        if rank < n_train:
            splits[index] = "train"
        elif rank < n_train + n_val:
            splits[index] = "val"
    return splits


def generate_dataset(
    cfg: SynthConfig,
    n_echograms: int,
    seed: int,
    out_dir: str | Path,
    workers: int = 1,
) -> List[DatasetEntry]:
    """生成 n 张回波图、对应标注与清单文件；同一种子逐字节可复现。"""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    splits = assign_splits(n_echograms, seed)

    def build(index: int) -> DatasetEntry:
        echogram_id = f"echo_{index:04d}"
        sub_seed = derive_seed(seed, index)
        start = cfg.start_epoch_s + int(round(index * cfg.duration_s))
        echogram, annotations = generate_echogram(cfg, np.random.default_rng(sub_seed), start_epoch_s=start)
        record = DatasetEntry(
            echogram_id=echogram_id,
            split=splits[index],
            seed=sub_seed,
            echogram=f"{echogram_id}.ech",
            annotations=f"{echogram_id}.json",
        )
        save_echogram(echogram, root / record.echogram)
        write_annotations(AnnotationFile(echogram_id, annotations), root / record.annotations)
        logger.debug("已生成 %s（%s，鱼群 %s 个）", echogram_id, record.split, len(annotations))
        return record

    records = run_ordered(build, list(range(n_echograms)), workers)
    manifest: Dict[str, object] = {
        "seed": seed,
        "synth": asdict(cfg),
        "echograms": [asdict(r) for r in records],
    }
    (root / DATASET_MANIFEST).write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info("合成数据集已写入 %s：%s 张回波图", root, n_echograms)
    return records
