"""手工特征：平均强度、离心率、圆度。"""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np
import numpy.typing as npt

from .errors import BoxOutOfBoundsError, DataError
from .models import BoundingBox, FeatureVector

# 单个像素视为单位正方形，其自身二阶矩为 1/12
_PIXEL_MOMENT = 1.0 / 12.0


def exterior_edge_count(mask: npt.ArrayLike) -> int:
    """像素集合外边界上的单位边数量。"""
    padded = np.pad(np.asarray(mask, dtype=bool), 1)
    return int(np.count_nonzero(np.diff(padded, axis=0)) + np.count_nonzero(np.diff(padded, axis=1)))


def eccentricity(mask: npt.ArrayLike) -> float:
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if ys.size == 0:
        raise DataError("空区域无法计算离心率")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    cov = np.array(
        [
            [np.mean(dx * dx) + _PIXEL_MOMENT, np.mean(dx * dy)],
            [np.mean(dx * dy), np.mean(dy * dy) + _PIXEL_MOMENT],
        ]
    )
    lam_min, lam_max = np.linalg.eigvalsh(cov)
    return float(math.sqrt(max(0.0, 1.0 - lam_min / lam_max)))


def circularity(mask: npt.ArrayLike) -> float:
    area = int(np.count_nonzero(mask))
    if area == 0:
        raise DataError("空区域无法计算圆度")
    # 阶梯边长平均比欧氏周长长 4/pi，按此修正后截断到 1
    perimeter = 0.25 * math.pi * exterior_edge_count(mask)
    return min(4.0 * math.pi * area / (perimeter * perimeter), 1.0)


def extract_features(mask: npt.ArrayLike, intensities: npt.ArrayLike) -> FeatureVector:
    """mask 为 (h, w) 区域掩膜，intensities 为 (C, h, w) 归一化强度。"""
    region = np.asarray(mask, dtype=bool)
    values = np.asarray(intensities, dtype=np.float64)
    if values.ndim == 2:
        values = values[np.newaxis]
    if values.shape[1:] != region.shape:
        raise DataError(f"强度形状 {values.shape} 与掩膜形状 {region.shape} 不一致")
    if not region.any():
        raise DataError("区域为空，无法提取特征")
    return FeatureVector(
        mean_intensity=float(values[:, region].mean()),
        eccentricity=eccentricity(region),
        circularity=circularity(region),
    )


def region_from_box(
    normalized: npt.NDArray[np.float64], box: BoundingBox
) -> Tuple[npt.NDArray[np.bool_], npt.NDArray[np.float64]]:
    """框内通道平均强度高于框内均值的像素构成区域；强度恒定时取整个框。"""
    _, height, width = normalized.shape
    if not box.fits(width, height):
        raise BoxOutOfBoundsError(f"包围盒 {box} 超出 {width}x{height}")
    patch = normalized[:, box.y : box.y2, box.x : box.x2]
    mean_map = patch.mean(axis=0)
    mask = mean_map > mean_map.mean()
    if not mask.any():
        mask = np.ones_like(mask)
    return mask, patch


def box_features(normalized: npt.NDArray[np.float64], box: BoundingBox) -> FeatureVector:
    return extract_features(*region_from_box(normalized, box))
