"""小型卷积网络：conv-relu-pool x2 -> dense-relu -> dense -> softmax，纯 numpy 实现前向与反向。

输出第 0 类为背景，第 1 类为鲱鱼群。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeMismatchError, TrainingDataError

logger = logging.getLogger(__name__)

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
N_CLASSES = 2
KERNEL = 3
# 归一化样本的值域为 [0, 1]，送入第一层卷积前平移到以 0 为中心
INPUT_CENTER = 0.5
_PARAM_NDIM = {"conv1_w": 4, "conv1_b": 1, "conv2_w": 4, "conv2_b": 1, "fc1_w": 2, "fc1_b": 1, "fc2_w": 2, "fc2_b": 1}

Array = npt.NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class CnnModel:
    params: Dict[str, Array]

    def __post_init__(self) -> None:
        missing = [name for name in PARAM_NAMES if name not in self.params]
        if missing:
            raise ShapeMismatchError(f"CNN 缺少参数：{missing}")
        p = {name: np.asarray(self.params[name], dtype=np.float64) for name in PARAM_NAMES}
        wrong = {name: p[name].shape for name in PARAM_NAMES if p[name].ndim != _PARAM_NDIM[name]}
        if wrong:
            raise ShapeMismatchError(f"CNN 参数维数非法：{wrong}")
        f1, c, k1, k2 = p["conv1_w"].shape
        f2, f1b, k3, k4 = p["conv2_w"].shape
        hidden, flat = p["fc1_w"].shape
        n_out, hidden_b = p["fc2_w"].shape
        side = int(round((flat / max(f2, 1)) ** 0.5))
        checks = [
            (k1, k2, k3, k4) == (KERNEL,) * 4,
            f1b == f1,
            p["conv1_b"].shape == (f1,),
            p["conv2_b"].shape == (f2,),
            flat == f2 * side * side and side >= 1,
            p["fc1_b"].shape == (hidden,),
            hidden_b == hidden,
            n_out == N_CLASSES and p["fc2_b"].shape == (N_CLASSES,),
        ]
        if not all(checks):
            raise ShapeMismatchError(f"CNN 各层形状不连贯：{ {k: v.shape for k, v in p.items()} }")
        if not all(np.isfinite(v).all() for v in p.values()):
            raise DataError("CNN 参数包含非有限值")
        object.__setattr__(self, "params", p)

    @property
    def in_channels(self) -> int:
        return self.params["conv1_w"].shape[1]

    @property
    def input_size(self) -> int:
        f2 = self.params["conv2_w"].shape[0]
        return 4 * int(round((self.params["fc1_w"].shape[1] / f2) ** 0.5))

    def rounded(self) -> "CnnModel":
        """参数舍入到 float32 可表示值，与模型文件精度一致。"""
        return CnnModel({k: v.astype(np.float32).astype(np.float64) for k, v in self.params.items()})


def init_cnn(
    in_channels: int,
    input_size: int = 32,
    conv1_filters: int = 8,
    conv2_filters: int = 16,
    hidden: int = 32,
    seed: int = 0,
) -> CnnModel:
    """按扇入缩放的均匀分布初始化权重，偏置为零。"""
    if input_size % 4 != 0 or input_size < 4:
        raise DataError(f"输入尺寸必须为 4 的倍数：{input_size}")
    rng = np.random.default_rng(seed)
    flat = conv2_filters * (input_size // 4) ** 2

    def uniform(shape: Tuple[int, ...], fan_in: int) -> Array:
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return CnnModel(
        {
            "conv1_w": uniform((conv1_filters, in_channels, KERNEL, KERNEL), in_channels * KERNEL * KERNEL),
            "conv1_b": np.zeros(conv1_filters),
            "conv2_w": uniform((conv2_filters, conv1_filters, KERNEL, KERNEL), conv1_filters * KERNEL * KERNEL),
            "conv2_b": np.zeros(conv2_filters),
            "fc1_w": uniform((hidden, flat), flat),
            "fc1_b": np.zeros(hidden),
            "fc2_w": uniform((N_CLASSES, hidden), hidden),
            "fc2_b": np.zeros(N_CLASSES),
        }
    )


# ---- 各层前向/反向 ----


def conv_forward(x: Array, w: Array, b: Array) -> Tuple[Array, Array]:
    """3x3 卷积，步长 1，零填充 1，输出与输入同尺寸。返回输出与窗口缓存。"""
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None], windows


def conv_backward(dout: Array, windows: Array, w: Array) -> Tuple[Array, Array, Array]:
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3))
    padded = np.pad(dout, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dwindows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))
    dx = np.tensordot(dwindows, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
    return dx.transpose(0, 3, 1, 2), dw, db


def relu_forward(x: Array) -> Array:
    return np.maximum(x, 0.0)


def relu_backward(dout: Array, x: Array) -> Array:
    return dout * (x > 0)


def _pool_windows(x: Array) -> Array:
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)


def maxpool_forward(x: Array) -> Tuple[Array, npt.NDArray[np.intp]]:
    """2x2 最大池化，步长 2；梯度回传到每个窗口中第一个最大值位置。"""
    windows = _pool_windows(x)
    index = windows.argmax(axis=-1)
    return np.take_along_axis(windows, index[..., None], axis=-1)[..., 0], index


def maxpool_backward(dout: Array, index: npt.NDArray[np.intp], shape: Tuple[int, ...]) -> Array:
    b, c, h, w = shape
    dwindows = np.zeros((b, c, h // 2, w // 2, 4))
    np.put_along_axis(dwindows, index[..., None], dout[..., None], axis=-1)
    return dwindows.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def dense_forward(x: Array, w: Array, b: Array) -> Array:
    return x @ w.T + b


def dense_backward(dout: Array, x: Array, w: Array) -> Tuple[Array, Array, Array]:
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def softmax(logits: Array) -> Array:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def cross_entropy(probs: Array, labels: npt.NDArray[np.intp]) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


# ---- 整网 ----


@dataclass
class ForwardCache:
    x: Array
    win1: Array
    z1: Array
    pool1_index: npt.NDArray[np.intp]
    a1_shape: Tuple[int, ...]
    win2: Array
    z2: Array
    pool2_index: npt.NDArray[np.intp]
    a2_shape: Tuple[int, ...]
    flat: Array
    h1: Array
    probs: Array


def _check_batch(model: CnnModel, batch: npt.ArrayLike) -> Array:
    x = np.asarray(batch, dtype=np.float64)
    expected = (model.in_channels, model.input_size, model.input_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeMismatchError(f"输入形状 {x.shape} 与模型期望 (B, {expected}) 不一致")
    if not np.isfinite(x).all():
        raise DataError("CNN 输入包含非有限值")
    return x


def cnn_forward(model: CnnModel, batch: npt.ArrayLike) -> Tuple[Array, ForwardCache]:
    """返回 (B, 2) 类别概率与反向传播所需缓存。"""
    p = model.params
    x = _check_batch(model, batch)
    z1, win1 = conv_forward(x - INPUT_CENTER, p["conv1_w"], p["conv1_b"])
    a1 = relu_forward(z1)
    pooled1, index1 = maxpool_forward(a1)
    z2, win2 = conv_forward(pooled1, p["conv2_w"], p["conv2_b"])
    a2 = relu_forward(z2)
    pooled2, index2 = maxpool_forward(a2)
    flat = pooled2.reshape(len(x), -1)
    h1 = dense_forward(flat, p["fc1_w"], p["fc1_b"])
    logits = dense_forward(relu_forward(h1), p["fc2_w"], p["fc2_b"])
    probs = softmax(logits)
    cache = ForwardCache(
        x=x,
        win1=win1,
        z1=z1,
        pool1_index=index1,
        a1_shape=a1.shape,
        win2=win2,
        z2=z2,
        pool2_index=index2,
        a2_shape=a2.shape,
        flat=flat,
        h1=h1,
        probs=probs,
    )
    return probs, cache


def _as_label_array(labels: Sequence[int] | npt.ArrayLike, batch_size: int) -> npt.NDArray[np.intp]:
    y = np.asarray(labels).astype(np.intp)
    if y.shape != (batch_size,) or ((y != 0) & (y != 1)).any():
        raise ShapeMismatchError(f"标签形状或取值非法：{y.shape}，批大小 {batch_size}")
    return y


def cnn_backward(model: CnnModel, cache: ForwardCache, labels: Sequence[int] | npt.ArrayLike) -> Dict[str, Array]:
    """批平均交叉熵对每个参数的解析梯度。"""
    p = model.params
    batch_size = cache.x.shape[0]
    y = _as_label_array(labels, batch_size)
    dlogits = cache.probs.copy()
    dlogits[np.arange(batch_size), y] -= 1.0
    dlogits /= batch_size
    grads: Dict[str, Array] = {}
    dh1_act, grads["fc2_w"], grads["fc2_b"] = dense_backward(dlogits, relu_forward(cache.h1), p["fc2_w"])
    dh1 = relu_backward(dh1_act, cache.h1)
    dflat, grads["fc1_w"], grads["fc1_b"] = dense_backward(dh1, cache.flat, p["fc1_w"])
    pooled2_shape = (batch_size, cache.a2_shape[1], cache.a2_shape[2] // 2, cache.a2_shape[3] // 2)
    da2 = maxpool_backward(dflat.reshape(pooled2_shape), cache.pool2_index, cache.a2_shape)
    dz2 = relu_backward(da2, cache.z2)
    dpooled1, grads["conv2_w"], grads["conv2_b"] = conv_backward(dz2, cache.win2, p["conv2_w"])
    da1 = maxpool_backward(dpooled1, cache.pool1_index, cache.a1_shape)
    dz1 = relu_backward(da1, cache.z1)
    _, grads["conv1_w"], grads["conv1_b"] = conv_backward(dz1, cache.win1, p["conv1_w"])
    return grads


def loss_and_gradients(model: CnnModel, batch: npt.ArrayLike, labels: npt.ArrayLike) -> Tuple[float, Dict[str, Array]]:
    probs, cache = cnn_forward(model, batch)
    y = _as_label_array(labels, probs.shape[0])
    return cross_entropy(probs, y), cnn_backward(model, cache, y)


def cnn_predict_proba(model: CnnModel, batch: npt.ArrayLike, chunk: int = 256) -> Array:
    x = np.asarray(batch, dtype=np.float64)
    if len(x) == 0:
        return np.zeros((0, N_CLASSES))
    return np.concatenate([cnn_forward(model, x[i : i + chunk])[0] for i in range(0, len(x), chunk)])


def cnn_predict(model: CnnModel, batch: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    """argmax 决策，概率相等时判为背景。"""
    probs = cnn_predict_proba(model, batch)
    return probs[:, 1] > probs[:, 0]


def _validation_arrays(
    validation: Optional[Tuple[npt.ArrayLike, Sequence[bool] | npt.ArrayLike]], sample_shape: Tuple[int, ...]
) -> Optional[Tuple[Array, npt.NDArray[np.intp]]]:
    if validation is None:
        return None
    vx = np.asarray(validation[0], dtype=np.float64)
    vy = np.asarray(validation[1]).astype(np.intp)
    if len(vy) == 0:
        return None
    if vx.shape[1:] != sample_shape or len(vx) != len(vy) or ((vy != 0) & (vy != 1)).any():
        raise TrainingDataError(f"验证数据形状非法：crops {vx.shape}，labels {vy.shape}")
    if not np.isfinite(vx).all():
        raise TrainingDataError("验证样本包含非有限值")
    return vx, vy


def train_cnn(
    crops: npt.ArrayLike,
    labels: Sequence[bool] | npt.ArrayLike,
    epochs: int = 50,
    lr: float = 0.01,
    momentum: float = 0.9,
    batch_size: int = 32,
    seed: int = 0,
    weight_decay: float = 1e-4,
    conv1_filters: int = 8,
    conv2_filters: int = 16,
    hidden: int = 32,
    validation: Optional[Tuple[npt.ArrayLike, Sequence[bool] | npt.ArrayLike]] = None,
) -> Tuple[CnnModel, List[float]]:
    """带动量的小批量 SGD；同一种子与单线程下结果逐位可复现。

    给出验证集时返回验证损失最低那一轮的参数（并列取较早的一轮），否则返回最后一轮。
    """
    x = np.asarray(crops, dtype=np.float64)
    y = np.asarray(labels).astype(np.intp)
    if x.ndim != 4 or x.shape[2] != x.shape[3] or len(x) != len(y):
        raise TrainingDataError(f"训练数据形状非法：crops {x.shape}，labels {y.shape}")
    if not np.isfinite(x).all():
        raise TrainingDataError("训练样本包含非有限值")
    if not ((y == 1).any() and (y == 0).any()):
        raise TrainingDataError("训练集必须同时包含正负两类样本")
    val = _validation_arrays(validation, x.shape[1:])
    model = init_cnn(x.shape[1], x.shape[2], conv1_filters, conv2_filters, hidden, seed=seed)
    params = {k: v.copy() for k, v in model.params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(seed + 1)
    history: List[float] = []
    best: Optional[Tuple[float, int, Dict[str, Array]]] = None
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch_size):
            index = order[start : start + batch_size]
            loss, grads = loss_and_gradients(CnnModel(params), x[index], y[index])
            total += loss * len(index)
            for name in PARAM_NAMES:
                grad = grads[name]
                if name.endswith("_w"):
                    grad = grad + weight_decay * params[name]
                velocity[name] = momentum * velocity[name] - lr * grad
                params[name] = params[name] + velocity[name]
        history.append(total / len(x))
        if val is None:
            logger.debug("cnn epoch %s 平均损失 %.6f", epoch, history[-1])
            continue
        val_loss = cross_entropy(cnn_predict_proba(CnnModel(params), val[0]), val[1])
        logger.debug("cnn epoch %s 平均损失 %.6f，验证损失 %.6f", epoch, history[-1], val_loss)
        if best is None or val_loss < best[0]:
            best = (val_loss, epoch, {k: v.copy() for k, v in params.items()})
    if best is not None:
        logger.info("按验证损失选取第 %s 轮参数（验证损失 %.6f）", best[1], best[0])
        params = best[2]
    return CnnModel(params).rounded(), history
