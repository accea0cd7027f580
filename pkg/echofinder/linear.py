"""线性核 SVM 基线：特征标准化 + L2 正则 hinge loss 的随机次梯度下降。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .errors import ShapeMismatchError, TrainingDataError
from .models import NEGATIVE, POSITIVE, FeatureVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: npt.NDArray[np.float64]
    bias: float
    feature_means: npt.NDArray[np.float64]
    feature_scales: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        dims = {np.shape(self.weights), np.shape(self.feature_means), np.shape(self.feature_scales)}
        if len(dims) != 1 or np.ndim(self.weights) != 1:
            raise ShapeMismatchError(f"线性模型参数维度不一致：{dims}")
        if not (np.asarray(self.feature_scales) > 0).all():
            raise ShapeMismatchError("特征尺度必须严格为正")

    @property
    def n_features(self) -> int:
        return int(np.shape(self.weights)[0])

    def normalize(self, features: npt.ArrayLike) -> npt.NDArray[np.float64]:
        values = np.asarray(features, dtype=np.float64)
        if values.shape[-1] != self.n_features:
            raise ShapeMismatchError(f"特征维度 {values.shape[-1]} 与模型维度 {self.n_features} 不一致")
        return (values - self.feature_means) / self.feature_scales

    def margins(self, features: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return self.normalize(features) @ self.weights + self.bias


def fit_normalization(x: npt.NDArray[np.float64]) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    means = x.mean(axis=0)
    scales = x.std(axis=0)
    # 常数特征无法缩放，尺度取 1
    scales = np.where(scales > 0, scales, 1.0)
    return means, scales


def hinge_subgradient(
    weights: npt.NDArray[np.float64], bias: float, x: npt.NDArray[np.float64], y: float, reg: float
) -> Tuple[npt.NDArray[np.float64], float]:
    """单样本目标 reg/2*|w|^2 + max(0, 1 - y(w.x + b)) 的次梯度。"""
    grad_w = reg * weights
    grad_b = 0.0
    if y * (float(x @ weights) + bias) < 1.0:
        grad_w = grad_w - y * x
        grad_b = -y
    return grad_w, grad_b


def objective(weights: npt.NDArray[np.float64], bias: float, x: npt.NDArray[np.float64], y: npt.NDArray[np.float64], reg: float) -> float:
    hinge = np.maximum(0.0, 1.0 - y * (x @ weights + bias))
    return float(0.5 * reg * weights @ weights + hinge.mean())


def _is_positive(label: object) -> bool:
    if isinstance(label, str):
        return label == POSITIVE
    return bool(label)


def _as_training_arrays(
    features: Sequence[FeatureVector] | npt.ArrayLike, labels: Sequence[bool] | Sequence[str]
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    rows = [f.as_array() if isinstance(f, FeatureVector) else np.asarray(f, dtype=np.float64) for f in features]
    if not rows:
        raise TrainingDataError("训练集为空")
    x = np.vstack(rows).astype(np.float64)
    y = np.array([1.0 if _is_positive(lab) else -1.0 for lab in labels])
    if x.shape[0] != y.shape[0]:
        raise TrainingDataError(f"特征数 {x.shape[0]} 与标签数 {y.shape[0]} 不一致")
    if not np.isfinite(x).all():
        raise TrainingDataError("训练特征包含非有限值")
    if not ((y > 0).any() and (y < 0).any()):
        raise TrainingDataError("训练集必须同时包含正负两类样本")
    return x, y


def train_linear(
    features: Sequence[FeatureVector] | npt.ArrayLike,
    labels: Sequence[bool] | Sequence[str],
    epochs: int = 100,
    lr: float = 0.1,
    reg: float = 1e-3,
    seed: int = 0,
) -> Tuple[LinearModel, List[float]]:
    """返回模型与每轮结束时的目标函数值。"""
    x_raw, y = _as_training_arrays(features, labels)
    means, scales = fit_normalization(x_raw)
    x = (x_raw - means) / scales
    rng = np.random.default_rng(seed)
    weights = np.zeros(x.shape[1])
    bias = 0.0
    history: List[float] = []
    for epoch in range(epochs):
        step = lr / np.sqrt(1.0 + epoch)
        for i in rng.permutation(x.shape[0]):
            grad_w, grad_b = hinge_subgradient(weights, bias, x[i], y[i], reg)
            weights = weights - step * grad_w
            bias = bias - step * grad_b
        history.append(objective(weights, bias, x, y, reg))
        logger.debug("linear epoch %s 目标值 %.6f", epoch, history[-1])
    model = LinearModel(
        weights=_to_f32(weights),
        bias=float(np.float32(bias)),
        feature_means=_to_f32(means),
        feature_scales=_to_f32(scales),
    )
    return model, history


def _to_f32(values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    # 与模型文件的 float32 精度保持一致，保存后再加载预测不变
    return values.astype(np.float32).astype(np.float64)


def predict_linear(model: LinearModel, features: FeatureVector | npt.ArrayLike) -> Tuple[str, float]:
    values = features.as_array() if isinstance(features, FeatureVector) else features
    margin = float(model.margins(values))
    return (POSITIVE if margin > 0 else NEGATIVE), margin
