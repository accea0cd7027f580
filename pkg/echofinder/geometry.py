from __future__ import annotations

import math
from typing import Tuple

import numpy as np
import numpy.typing as npt

from .errors import DataError
from .models import BoundingBox, Echogram

DEFAULT_LO_DB = -90.0
DEFAULT_HI_DB = -30.0

# 各向同性区域（二阶矩全相等）不具备主轴方向，按 90 度处理
ISOTROPIC_ORIENTATION_DEG = 90.0


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """两个包围盒的交并比，面积按整数像素计 (w*h)。"""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def normalize_grid(
    grid: npt.ArrayLike, lo_db: float = DEFAULT_LO_DB, hi_db: float = DEFAULT_HI_DB
) -> npt.NDArray[np.float64]:
    if not lo_db < hi_db:
        raise DataError(f"归一化窗口非法：lo_db={lo_db} 必须小于 hi_db={hi_db}")
    values = np.asarray(grid, dtype=np.float64)
    return np.clip((values - lo_db) / (hi_db - lo_db), 0.0, 1.0)


def normalize_sv(
    echogram: Echogram, lo_db: float = DEFAULT_LO_DB, hi_db: float = DEFAULT_HI_DB
) -> npt.NDArray[np.float64]:
    return normalize_grid(echogram.data, lo_db, hi_db)


def region_orientation(moments: Tuple[float, float, float]) -> float:
    """由二阶中心矩 (mu20, mu02, mu11) 求主轴与水平方向夹角，折叠到 [0, 90]。"""
    mu20, mu02, mu11 = moments
    if mu20 == mu02 and mu11 == 0:
        return ISOTROPIC_ORIENTATION_DEG
    # 图像 y 轴向下，取绝对值后与几何角度一致
    theta = 0.5 * math.degrees(math.atan2(2.0 * mu11, mu20 - mu02))
    return min(abs(theta), 90.0)


def clip_box(box: BoundingBox, width: int, height: int) -> BoundingBox | None:
    x1, y1 = min(box.x, width), min(box.y, height)
    x2, y2 = min(box.x2, width), min(box.y2, height)
    if x2 <= x1 or y2 <= y1:
        return None
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)


def box_from_extent(y0: int, y1: int, x0: int, x1: int) -> BoundingBox:
    return BoundingBox(int(x0), int(y0), int(x1 - x0), int(y1 - y0))
