"""回波图与中间结果的 PNG 渲染。"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from matplotlib import colormaps
from PIL import Image, ImageDraw

from .errors import DataError
from .geometry import normalize_grid
from .models import BoundingBox, Echogram
from .roi_extractor import RoiStages

Color = Tuple[int, int, int]

GREEN: Color = (0, 255, 0)
RED: Color = (255, 0, 0)
BLACK: Color = (0, 0, 0)

Overlay = Tuple[BoundingBox, Color]


def _to_png(image: Image.Image) -> bytes:
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()


def colorize(grid: npt.ArrayLike, lo: float, hi: float, colormap: str = "viridis") -> Image.Image:
    try:
        cmap = colormaps[colormap]
    except KeyError as exc:
        raise DataError(f"未知色图：{colormap!r}") from exc
    unit = normalize_grid(np.asarray(grid, dtype=np.float64), lo, hi)
    rgba = cmap(unit, bytes=True)
    return Image.fromarray(np.ascontiguousarray(rgba[..., :3]))


def draw_boxes(image: Image.Image, overlays: Iterable[Overlay]) -> Image.Image:
    """在图上画 1 像素宽的矩形框，超出画面的部分由 Pillow 自动裁掉。"""
    draw = ImageDraw.Draw(image)
    for box, color in overlays:
        draw.rectangle([box.x, box.y, box.x2 - 1, box.y2 - 1], outline=color, width=1)
    return image


def render_png(
    echogram: Echogram,
    channel: int | str = 0,
    overlays: Sequence[Overlay] = (),
    lo: float = -90.0,
    hi: float = -30.0,
    colormap: str = "viridis",
) -> bytes:
    """渲染单个通道的 Sv 网格并叠加框；通道可用序号或名称指定。图像宽高与回波图一致，深度向下。"""
    image = colorize(echogram.data[echogram.channel_index(channel)], lo, hi, colormap)
    return _to_png(draw_boxes(image, overlays))


def detection_overlays(
    gt: Sequence[BoundingBox],
    rois: Sequence[BoundingBox],
    positive: Sequence[bool],
) -> List[Overlay]:
    """标注为绿色，判为鲱鱼的 ROI 为红色，判为背景的 ROI 为黑色；标注画在最上层。"""
    overlays: List[Overlay] = [(box, RED if keep else BLACK) for box, keep in zip(rois, positive)]
    overlays.extend((box, GREEN) for box in gt)
    return overlays


def render_mask(mask: npt.ArrayLike) -> bytes:
    values = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    return _to_png(Image.fromarray(values))


def render_scores(scores: npt.ArrayLike, n_channels: int, colormap: str = "magma") -> bytes:
    return _to_png(colorize(scores, 0.0, float(max(n_channels, 1)), colormap))


def render_stages(
    stages: RoiStages,
    out_dir: str | Path,
    prefix: str,
    channel: Optional[int] = None,
) -> Dict[str, Path]:
    """把各处理阶段逐张写成 PNG，返回阶段名到文件路径的映射。"""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    channels = range(len(stages.binarized)) if channel is None else [channel]
    images: Dict[str, bytes] = {}
    for c in channels:
        images[f"filtered_c{c}"] = _to_png(colorize(stages.filtered[c], 0.0, 1.0, "gray"))
        images[f"binarized_c{c}"] = render_mask(stages.binarized[c])
        images[f"morphed_c{c}"] = render_mask(stages.morphed[c])
    images["scores"] = render_scores(stages.scores, len(stages.morphed))
    images["consensus"] = render_mask(stages.consensus)
    written: Dict[str, Path] = {}
    for name, blob in images.items():
        path = root / f"{prefix}_{name}.png"
        path.write_bytes(blob)
        written[name] = path
    return written
