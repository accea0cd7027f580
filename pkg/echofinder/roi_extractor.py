"""ROI 提取：时间向中值滤波、自适应阈值、形态学开闭、多通道一致性、连通域筛选。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from .config import NormalizationConfig, RoiConfig
from .errors import DataError, ShapeMismatchError
from .geometry import normalize_sv, region_orientation
from .models import BinaryMask, BoundingBox, Echogram, LabeledRegion, ScoreMatrix

logger = logging.getLogger(__name__)

# 自适应阈值使用的定点小数位数，保证积分图求和无舍入误差
FIXED_POINT_BITS = 24
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def median_filter_time(grid: npt.ArrayLike, k: int) -> npt.NDArray[np.float64]:
    """沿时间轴（列方向）做长度为 k 的中值滤波，边界复制填充。"""
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1 or k % 2 == 0:
        raise DataError(f"中值滤波核长度必须为正奇数：{k!r}")
    values = np.asarray(grid, dtype=np.float64)
    if k == 1:
        return values.copy()
    return ndimage.median_filter(values, size=(1, k), mode="nearest")


def quantize_unit(grid: npt.ArrayLike) -> npt.NDArray[np.int64]:
    return np.rint(np.asarray(grid, dtype=np.float64) * (1 << FIXED_POINT_BITS)).astype(np.int64)


def integral_image(values: npt.NDArray[np.int64]) -> npt.NDArray[np.int64]:
    """带一行一列零填充的积分图，S[y, x] 为 values[:y, :x] 之和。"""
    height, width = values.shape
    table = np.zeros((height + 1, width + 1), dtype=np.int64)
    np.cumsum(np.cumsum(values, axis=0), axis=1, out=table[1:, 1:])
    return table


def _window_bounds(n: int, radius: int):
    centers = np.arange(n)
    return np.clip(centers - radius, 0, n), np.clip(centers + radius + 1, 0, n)


def adaptive_threshold(grid: npt.ArrayLike, window: int, t: float) -> BinaryMask:
    """局部均值自适应二值化。

    像素值乘以 (1 - t) 后仍大于窗口均值时记为前景；窗口在边界处截断，
    均值只统计落在图像内的部分。
    """
    if isinstance(window, bool) or window < 3 or window % 2 == 0:
        raise DataError(f"自适应阈值窗口必须为 >= 3 的奇数：{window!r}")
    if not 0.0 < t < 1.0:
        raise DataError(f"自适应阈值偏移必须在 (0, 1) 内：{t!r}")
    values = np.asarray(grid, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"自适应阈值输入必须是二维数组，当前维度 {values.ndim}")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise DataError("自适应阈值输入必须位于 [0, 1]")
    q = quantize_unit(values)
    table = integral_image(q)
    radius = window // 2
    y0, y1 = _window_bounds(q.shape[0], radius)
    x0, x1 = _window_bounds(q.shape[1], radius)
    sums = (
        table[np.ix_(y1, x1)]
        - table[np.ix_(y0, x1)]
        - table[np.ix_(y1, x0)]
        + table[np.ix_(y0, x0)]
    )
    counts = np.outer(y1 - y0, x1 - x0)
    # 以 value * count * (1 - t) > sum 比较，避免除法
    return (q * counts).astype(np.float64) * (1.0 - t) > sums


def _square(radius: int) -> npt.NDArray[np.bool_]:
    if isinstance(radius, bool) or radius < 1:
        raise DataError(f"结构元半径必须 >= 1：{radius!r}")
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def morph_open(mask: BinaryMask, radius: int) -> BinaryMask:
    structure = _square(radius)
    eroded = ndimage.binary_erosion(np.asarray(mask, dtype=bool), structure, border_value=0)
    return ndimage.binary_dilation(eroded, structure, border_value=0)


def morph_close(mask: BinaryMask, radius: int) -> BinaryMask:
    structure = _square(radius)
    # 图像外视为背景：在扩展平面上先膨胀再腐蚀，最后裁回原尺寸
    padded = np.pad(np.asarray(mask, dtype=bool), radius, mode="constant", constant_values=False)
    dilated = ndimage.binary_dilation(padded, structure, border_value=0)
    closed = ndimage.binary_erosion(dilated, structure, border_value=0)
    return closed[radius:-radius, radius:-radius]


def score_matrix(masks: Sequence[BinaryMask]) -> ScoreMatrix:
    """逐像素统计有多少个通道为前景。"""
    if not masks:
        raise DataError("通道一致性至少需要一个掩膜")
    shape = np.shape(masks[0])
    for index, mask in enumerate(masks):
        if np.shape(mask) != shape:
            raise ShapeMismatchError(f"第 {index} 个掩膜尺寸 {np.shape(mask)} 与 {shape} 不一致")
    return np.sum(np.stack([np.asarray(m, dtype=bool) for m in masks]), axis=0, dtype=np.uint8)


def channel_consensus(masks: Sequence[BinaryMask], min_consensus: int = 3) -> BinaryMask:
    scores = score_matrix(masks)
    if not 1 <= min_consensus <= len(masks):
        raise DataError(f"min_consensus 必须在 [1, {len(masks)}] 内：{min_consensus}")
    return scores >= min_consensus


def _describe(ys: npt.NDArray[np.intp], xs: npt.NDArray[np.intp]) -> LabeledRegion:
    n = int(ys.size)
    sx, sy = int(xs.sum()), int(ys.sum())
    sxx = int(np.dot(xs, xs))
    syy = int(np.dot(ys, ys))
    sxy = int(np.dot(xs, ys))
    # n * mu 为精确整数，保证各向同性判断不受舍入影响
    num20 = n * sxx - sx * sx
    num02 = n * syy - sy * sy
    num11 = n * sxy - sx * sy
    moments = (num20 / n, num02 / n, num11 / n)
    box = BoundingBox(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    return LabeledRegion(
        pixel_count=n,
        centroid=(sx / n, sy / n),
        central_moments=moments,
        orientation_deg=region_orientation(moments),
        box=box,
        pixels=(ys, xs),
    )


def connected_components(mask: BinaryMask) -> List[LabeledRegion]:
    """8 连通标记，按包围盒左上角 (y, x) 排序。"""
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT_CONNECTED)
    regions: List[LabeledRegion] = []
    for index, window in enumerate(ndimage.find_objects(labels), start=1):
        if window is None:
            continue
        ys, xs = np.nonzero(labels[window] == index)
        regions.append(_describe(ys.astype(np.intp) + window[0].start, xs.astype(np.intp) + window[1].start))
    regions.sort(key=lambda r: (r.box.y, r.box.x, r.box.h, r.box.w))
    logger.debug("连通域 %s 个", count)
    return regions


def filter_components(regions: Sequence[LabeledRegion], cfg: RoiConfig) -> List[LabeledRegion]:
    return [
        r
        for r in regions
        if r.pixel_count >= cfg.min_area_px and r.orientation_deg >= cfg.min_orientation_deg
    ]


@dataclass
class RoiStages:
    """流水线各阶段的中间结果，形状均为 (C, H, W) 或 (H, W)。"""

    normalized: npt.NDArray[np.float64]
    filtered: npt.NDArray[np.float64]
    binarized: npt.NDArray[np.bool_]
    morphed: npt.NDArray[np.bool_]
    scores: ScoreMatrix
    consensus: BinaryMask
    components: List[LabeledRegion]
    regions: List[LabeledRegion]


def extract_stages(
    echogram: Echogram,
    cfg: RoiConfig,
    normalization: Optional[NormalizationConfig] = None,
) -> RoiStages:
    cfg.validate(echogram.n_channels)
    norm = normalization or NormalizationConfig()
    normalized = normalize_sv(echogram, norm.lo_db, norm.hi_db)
    filtered = np.empty_like(normalized)
    binarized = np.empty(normalized.shape, dtype=bool)
    morphed = np.empty(normalized.shape, dtype=bool)
    for c in range(echogram.n_channels):
        filtered[c] = median_filter_time(normalized[c], cfg.median_len)
        binarized[c] = adaptive_threshold(filtered[c], cfg.thresh_window, cfg.thresh_offset)
        morphed[c] = morph_close(morph_open(binarized[c], cfg.morph_radius), cfg.morph_radius)
    scores = score_matrix(list(morphed))
    consensus = scores >= cfg.min_consensus
    components = connected_components(consensus)
    regions = filter_components(components, cfg)
    logger.debug("连通域 %s 个，筛选后保留 %s 个", len(components), len(regions))
    return RoiStages(
        normalized=normalized,
        filtered=filtered,
        binarized=binarized,
        morphed=morphed,
        scores=scores,
        consensus=consensus,
        components=components,
        regions=regions,
    )


def extract_regions(
    echogram: Echogram,
    cfg: RoiConfig,
    normalization: Optional[NormalizationConfig] = None,
) -> List[LabeledRegion]:
    return extract_stages(echogram, cfg, normalization).regions


def extract_rois(
    echogram: Echogram,
    cfg: RoiConfig,
    normalization: Optional[NormalizationConfig] = None,
) -> List[BoundingBox]:
    return [region.box for region in extract_regions(echogram, cfg, normalization)]
