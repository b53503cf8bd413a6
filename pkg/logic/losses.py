"""
激活函数与损失函数

numpy 版本是参考实现；torch 模块用于训练，语义与 numpy 版本一致。
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from logic.constants import LABEL_SMOOTHING
from logic.errors import LossError, ModelError


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # 分段计算避免 exp 溢出
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def swish(x) -> np.ndarray:
    """f(x) = x · sigmoid(x)"""
    x = np.asarray(x, dtype=np.float64)
    return x * _sigmoid(x)


def swish_grad(x) -> np.ndarray:
    """f'(x) = σ(x) + x·σ(x)(1 − σ(x))"""
    x = np.asarray(x, dtype=np.float64)
    s = _sigmoid(x)
    return s + x * s * (1.0 - s)


@dataclass(frozen=True)
class SmoothedLabelDistribution:
    epsilon: float
    num_classes: int
    true_class: int
    values: np.ndarray


def _check_smoothing(k: int, num_classes: int, epsilon: float):
    if not 0.0 <= epsilon < 1.0:
        raise LossError(f"ε 必须在 [0, 1) 内: {epsilon}", "LOSS_EPSILON")
    if num_classes < 2:
        raise LossError(f"类别数至少为2: {num_classes}", "LOSS_NUM_CLASSES")
    if not 0 <= k < num_classes:
        raise LossError(f"类别 {k} 超出 [0, {num_classes})", "LOSS_LABEL_RANGE")


def smooth_labels(k: int, num_classes: int, epsilon: float = LABEL_SMOOTHING) -> SmoothedLabelDistribution:
    """q'(k) = (1 − ε)·δ(k, k*) + ε/K"""
    _check_smoothing(k, num_classes, epsilon)
    values = np.full(num_classes, epsilon / num_classes)
    values[k] += 1.0 - epsilon
    values.setflags(write=False)
    return SmoothedLabelDistribution(epsilon, num_classes, k, values)


def log_softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(q, logits) -> float:
    """H(q, p) = −Σ q(k) log p(k)，p = softmax(logits)"""
    return float(-(np.asarray(q, dtype=np.float64) * log_softmax(logits)).sum())


def smoothed_cross_entropy(logits, k: int, epsilon: float = LABEL_SMOOTHING) -> float:
    """单个样本的平滑交叉熵"""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise LossError(f"logits 必须是一维向量，实际 {logits.shape}", "LOSS_SHAPE")
    if not np.isfinite(logits).all():
        raise LossError("logits 中含有 NaN 或 inf", "LOSS_NON_FINITE")
    q = smooth_labels(k, logits.shape[0], epsilon)
    return cross_entropy(q.values, logits)


def entropy(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    nz = values[values > 0]
    return float(-(nz * np.log(nz)).sum())


class Swish(nn.Module):
    def forward(self, x):
        return x * torch.sigmoid(x)


class LabelSmoothingCrossEntropy(nn.Module):
    """批量平滑交叉熵（取平均），ε=0 时等于标准交叉熵"""

    def __init__(self, epsilon: float = LABEL_SMOOTHING):
        super().__init__()
        if not 0.0 <= epsilon < 1.0:
            raise LossError(f"ε 必须在 [0, 1) 内: {epsilon}", "LOSS_EPSILON")
        self.epsilon = epsilon

    def forward(self, logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        num_classes = logits.shape[-1]
        if target.numel() and (int(target.min()) < 0 or int(target.max()) >= num_classes):
            raise LossError(f"标签超出 [0, {num_classes})", "LOSS_LABEL_RANGE")
        logp = F.log_softmax(logits, dim=-1)
        nll = -logp.gather(-1, target.unsqueeze(-1)).squeeze(-1)
        uniform = -logp.mean(dim=-1)
        return ((1.0 - self.epsilon) * nll + self.epsilon * uniform).mean()


def activation_module(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "swish":
        return Swish()
    raise ModelError(f"未知的激活函数: {name}", "MODEL_ACTIVATION")
