"""ROI 分类器适配层：把线性模型、CNN 以及上下界参照统一成逐框二分类接口。"""

from __future__ import annotations

from typing import List, Optional, Protocol, Sequence

import numpy as np
import numpy.typing as npt

from .cnn import CnnModel, cnn_predict
from .errors import DataError
from .features import box_features
from .linear import LinearModel
from .mining import best_iou, crop_normalized
from .model_store import Model


class RoiClassifier(Protocol):
    name: str

    def classify(
        self,
        normalized: npt.NDArray[np.float64],
        boxes: Sequence,
        gt: Optional[Sequence] = None,
    ) -> List[bool]:
        ...


class LinearRoiClassifier:
    def __init__(self, model: LinearModel, name: str = "linear-svm"):
        self.model = model
        self.name = name

    def classify(self, normalized, boxes, gt=None) -> List[bool]:
        if not boxes:
            return []
        features = np.vstack([box_features(normalized, box).as_array() for box in boxes])
        return [bool(m > 0) for m in self.model.margins(features)]


class CnnRoiClassifier:
    def __init__(self, model: CnnModel, name: str = "cnn"):
        self.model = model
        self.name = name

    def classify(self, normalized, boxes, gt=None) -> List[bool]:
        if not boxes:
            return []
        if normalized.shape[0] != self.model.in_channels:
            raise DataError(f"回波图通道数 {normalized.shape[0]} 与模型输入通道数 {self.model.in_channels} 不一致")
        crops = np.stack([crop_normalized(normalized, box, self.model.input_size) for box in boxes])
        return [bool(v) for v in cnn_predict(self.model, crops)]


class OracleRoiClassifier:
    """按与标注的最佳 IoU 打标签，给出分类阶段的上界。"""

    def __init__(self, tau: float = 0.4, name: str = "oracle"):
        self.tau = tau
        self.name = name

    def classify(self, normalized, boxes, gt=None) -> List[bool]:
        if gt is None:
            raise DataError("oracle 分类器需要标注框")
        return [best_iou(box, gt) >= self.tau for box in boxes]


class RejectAllClassifier:
    name = "reject-all"

    def classify(self, normalized, boxes, gt=None) -> List[bool]:
        return [False] * len(boxes)


def classifier_for_model(model: Model, name: Optional[str] = None) -> RoiClassifier:
    if isinstance(model, LinearModel):
        return LinearRoiClassifier(model, name or "linear-svm")
    return CnnRoiClassifier(model, name or "cnn")
