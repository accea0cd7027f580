"""由 ROI 与标注生成训练样本：按 IoU 打标签、1:2 正负均衡、无上下文裁剪。"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from .config import MiningConfig, NormalizationConfig, RoiConfig
from .echogram_io import load_echogram, save_echogram
from .errors import BoxOutOfBoundsError, DataError
from .features import box_features
from .geometry import iou, normalize_sv
from .models import NEGATIVE, POSITIVE, BoundingBox, Echogram, FeatureVector, RoiLabel, Sample
from .roi_extractor import extract_rois

logger = logging.getLogger(__name__)

SAMPLES_MANIFEST = "samples.json"


def best_iou(box: BoundingBox, gt: Sequence[BoundingBox]) -> float:
    return max((iou(box, g) for g in gt), default=0.0)


def label_rois(
    rois: Sequence[BoundingBox], gt: Sequence[BoundingBox], tau: float = 0.4
) -> List[RoiLabel]:
    """IoU 低于 tau 的 ROI 为负样本，其余为正样本。"""
    if not 0.0 <= tau <= 1.0:
        raise DataError(f"IoU 阈值必须在 [0, 1] 内：{tau}")
    labels: List[RoiLabel] = []
    for roi in rois:
        score = best_iou(roi, gt)
        labels.append(RoiLabel(box=roi, label=NEGATIVE if score < tau else POSITIVE, best_iou=score))
    return labels


def balance_samples(samples: Sequence[Sample], ratio_neg_per_pos: float = 2.0, rng_seed: int = 0) -> List[Sample]:
    """保留全部正样本，并无放回随机抽取至多 ratio * P 个负样本，各自保持原顺序。"""
    if ratio_neg_per_pos < 0:
        raise DataError(f"负正样本比例不能为负：{ratio_neg_per_pos}")
    positives = [s for s in samples if s.positive]
    negatives = [s for s in samples if not s.positive]
    keep = min(len(negatives), int(ratio_neg_per_pos * len(positives)))
    rng = np.random.default_rng(rng_seed)
    chosen = np.sort(rng.choice(len(negatives), size=keep, replace=False)) if keep else []
    return positives + [negatives[i] for i in chosen]


def resample_bilinear(patch: npt.NDArray[np.float64], size: int) -> npt.NDArray[np.float64]:
    """把 (C, h, w) 双线性重采样到 (C, size, size)，角点对齐。"""
    _, height, width = patch.shape
    ys = np.linspace(0.0, height - 1, size)
    xs = np.linspace(0.0, width - 1, size)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return np.stack(
        [ndimage.map_coordinates(channel, [grid_y, grid_x], order=1, mode="nearest") for channel in patch]
    )


def crop_normalized(normalized: npt.NDArray[np.float64], box: BoundingBox, size: int) -> npt.NDArray[np.float32]:
    if size < 8:
        raise DataError(f"样本尺寸必须 >= 8：{size}")
    _, height, width = normalized.shape
    if not box.fits(width, height):
        raise BoxOutOfBoundsError(f"包围盒 {box} 超出 {width}x{height}")
    patch = normalized[:, box.y : box.y2, box.x : box.x2]
    return resample_bilinear(patch, size).astype(np.float32)


def crop_roi(
    echogram: Echogram,
    box: BoundingBox,
    size: int = 32,
    normalization: Optional[NormalizationConfig] = None,
) -> npt.NDArray[np.float32]:
    norm = normalization or NormalizationConfig()
    return crop_normalized(normalize_sv(echogram, norm.lo_db, norm.hi_db), box, size)


def mine_echogram(
    echogram: Echogram,
    gt: Sequence[BoundingBox],
    roi_cfg: RoiConfig,
    mining_cfg: MiningConfig,
    normalization: Optional[NormalizationConfig] = None,
    echogram_id: str = "",
    split: str = "train",
) -> List[Sample]:
    """对单张回波图提取 ROI 并生成未均衡的样本。"""
    norm = normalization or NormalizationConfig()
    normalized = normalize_sv(echogram, norm.lo_db, norm.hi_db)
    labelled = label_rois(extract_rois(echogram, roi_cfg, norm), gt, mining_cfg.iou_threshold)
    if mining_cfg.include_ground_truth:
        labelled = [RoiLabel(box=g, label=POSITIVE, best_iou=1.0) for g in gt] + labelled
    samples = [
        Sample(
            crop=crop_normalized(normalized, item.box, mining_cfg.crop_size),
            label=item.label,
            source_box=item.box,
            iou_with_gt=item.best_iou,
            features=box_features(normalized, item.box),
            echogram_id=echogram_id,
            split=split,
        )
        for item in labelled
    ]
    logger.debug(
        "%s：正样本 %s 个，负样本 %s 个",
        echogram_id,
        sum(s.positive for s in samples),
        sum(not s.positive for s in samples),
    )
    return samples


def _crop_echogram(crop: npt.NDArray[np.float32], frequencies: Sequence[float]) -> Echogram:
    # 样本裁剪值域为 [0, 1]，以回波图格式存放，深度轴仅作占位
    return Echogram(data=crop, frequencies_khz=tuple(frequencies), depth_min_m=0.0, depth_max_m=1.0, duration_s=1.0)


def write_samples(samples: Sequence[Sample], out_dir: str | Path, frequencies: Sequence[float]) -> Path:
    root = Path(out_dir)
    (root / "crops").mkdir(parents=True, exist_ok=True)
    entries: List[Dict[str, object]] = []
    for index, sample in enumerate(samples):
        name = f"crops/sample_{index:06d}.ech"
        save_echogram(_crop_echogram(sample.crop, frequencies), root / name)
        features = sample.features
        entries.append(
            {
                "file": name,
                "label": sample.label,
                "source_box": sample.source_box.as_list(),
                "best_iou": sample.iou_with_gt,
                "echogram_id": sample.echogram_id,
                "split": sample.split,
                "features": None if features is None else [features.mean_intensity, features.eccentricity, features.circularity],
            }
        )
    manifest = root / SAMPLES_MANIFEST
    manifest.write_text(json.dumps({"samples": entries}, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return manifest


def read_samples(sample_dir: str | Path, split: Optional[str] = None) -> List[Sample]:
    root = Path(sample_dir)
    manifest = root / SAMPLES_MANIFEST
    try:
        entries = json.loads(manifest.read_text(encoding="utf-8"))["samples"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"样本清单 {manifest} 格式错误：{exc}") from exc
    samples: List[Sample] = []
    for entry in entries:
        if split is not None and entry["split"] != split:
            continue
        features = entry.get("features")
        samples.append(
            Sample(
                crop=load_echogram(root / entry["file"]).data,
                label=entry["label"],
                source_box=BoundingBox(*entry["source_box"]),
                iou_with_gt=float(entry["best_iou"]),
                features=None if features is None else FeatureVector(*features),
                echogram_id=entry["echogram_id"],
                split=entry["split"],
            )
        )
    return samples
