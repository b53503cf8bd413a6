"""
SSTCN 可分离时空卷积网络

输入为每个关键点的特征图，形状 帧数 × 关键点数 × S × S（默认 60 × 33 × 24 × 24）。
  阶段1：重排成 帧 × (关键点·S) × S，1×1 卷积只在时间维混合
  阶段2：通道打乱后按帧数分组做 3×3 卷积（时间 + 部分空间）
  阶段3：每帧单独处理，按关键点数分组做 3×3 卷积（帧内空间）
  阶段4：池化到 3×3 后两层全连接分类
阶段1到3都带残差，激活函数全部为 Swish，每个模块后接 dropout。
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from logic.constants import SSTCN_FRAMES, SSTCN_KEYPOINTS, SSTCN_FEATURE_SIZE, SSTCN_DROPOUT
from logic.errors import ModelError, DataError
from logic.losses import Swish

logger = logging.getLogger('sstcn')

FEATURE_SIZES = (12, 24)


@dataclass(frozen=True)
class KeypointFeatureClip:
    data: np.ndarray
    label: Optional[int] = None

    def validate(self, frames: int = SSTCN_FRAMES, keypoints: int = SSTCN_KEYPOINTS) -> "KeypointFeatureClip":
        if self.data.ndim != 4:
            raise DataError(f"特征片段必须是4维，实际 {self.data.shape}", "DATA_SHAPE")
        f, j, h, w = self.data.shape
        if (f, j) != (frames, keypoints):
            raise DataError(f"特征片段应为 {frames} 帧 × {keypoints} 个关键点，实际 {f} × {j}", "DATA_SHAPE")
        if h != w:
            raise DataError(f"特征图必须是方形，实际 {h}×{w}", "DATA_SHAPE")
        if not np.isfinite(self.data).all():
            raise DataError("特征片段含有 NaN", "DATA_NAN")
        return self


@dataclass(frozen=True)
class SSTCNConfig:
    num_classes: int
    feature_size: int = SSTCN_FEATURE_SIZE
    frames: int = SSTCN_FRAMES
    keypoints: int = SSTCN_KEYPOINTS
    dropout: float = SSTCN_DROPOUT
    temporal_width: int = 128
    spatial_expansion: int = 2
    classifier_hidden: int = 256

    def __post_init__(self):
        if self.num_classes < 1:
            raise ModelError(f"类别数必须为正: {self.num_classes}", "MODEL_CONFIG")
        if self.feature_size < 3:
            raise ModelError(f"特征图尺寸太小: {self.feature_size}", "MODEL_CONFIG")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout 必须在 [0, 1): {self.dropout}", "MODEL_CONFIG")
        if min(self.frames, self.keypoints, self.temporal_width, self.spatial_expansion,
               self.classifier_hidden) < 1:
            raise ModelError("SSTCN 各层宽度必须为正", "MODEL_CONFIG")


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """输出通道 k 取自输入通道 perm[k]"""
    if groups < 1 or channels % groups:
        raise ModelError(f"通道数 {channels} 不能被分组数 {groups} 整除", "MODEL_GROUPS")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: torch.Tensor, groups: int) -> torch.Tensor:
    """把通道看成 groups × (C/groups) 后转置"""
    B, C = x.shape[:2]
    if groups < 1 or C % groups:
        raise ModelError(f"通道数 {C} 不能被分组数 {groups} 整除", "MODEL_GROUPS")
    rest = x.shape[2:]
    x = x.reshape(B, groups, C // groups, *rest).transpose(1, 2)
    return x.reshape(B, C, *rest)


def pool_features(raw, target: int = SSTCN_FEATURE_SIZE, frames: int = None,
                  keypoints: int = None) -> KeypointFeatureClip:
    """窗口最大池化到 target × target；尺寸不能整除时拒绝"""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 4:
        raise DataError(f"特征必须是 帧×关键点×h×w，实际 {raw.shape}", "DATA_SHAPE")
    f, j, h, w = raw.shape
    if h < target or w < target or h % target or w % target:
        raise DataError(f"特征图 {h}×{w} 不能被池化到 {target}×{target}", "DATA_POOL_SIZE")
    kh, kw = h // target, w // target
    pooled = raw.reshape(f, j, target, kh, target, kw).max(axis=(3, 5))
    clip = KeypointFeatureClip(pooled)
    if frames is not None or keypoints is not None:
        clip.validate(frames or f, keypoints or j)
    return clip


class SSTCN(nn.Module):
    def __init__(self, config: SSTCNConfig):
        super().__init__()
        self.config = config
        F_, J, S = config.frames, config.keypoints, config.feature_size
        m = config.spatial_expansion

        # 阶段1：通道 = 帧
        self.temporal = nn.Sequential(
            nn.Conv2d(F_, config.temporal_width, 1, bias=False),
            nn.BatchNorm2d(config.temporal_width),
            Swish(),
            nn.Conv2d(config.temporal_width, F_, 1, bias=False),
            nn.BatchNorm2d(F_),
        )
        # 阶段2：通道 = 帧·关键点，按帧数分组
        self.temporal_spatial = nn.Sequential(
            nn.Conv2d(F_ * J, F_ * J, 3, padding=1, groups=F_, bias=False),
            nn.BatchNorm2d(F_ * J),
            Swish(),
            nn.Conv2d(F_ * J, F_ * J, 3, padding=1, groups=F_, bias=False),
            nn.BatchNorm2d(F_ * J),
        )
        # 阶段3：帧并入 batch，通道 = 关键点，按关键点数分组
        self.spatial_a = nn.Sequential(
            nn.Conv2d(J, J * m, 3, padding=1, groups=J, bias=False),
            nn.BatchNorm2d(J * m),
            Swish(),
        )
        self.spatial_b = nn.Sequential(
            nn.Conv2d(J * m, J, 3, padding=1, groups=J, bias=False),
            nn.BatchNorm2d(J),
        )
        self.act = Swish()
        self.dropout = nn.Dropout(config.dropout)

        self.pool = nn.AdaptiveAvgPool2d(3)
        self.classifier = nn.Sequential(
            nn.Linear(F_ * J * 9, config.classifier_hidden),
            Swish(),
            nn.Dropout(config.dropout),
            nn.Linear(config.classifier_hidden, config.num_classes),
        )

    def check_input(self, x: torch.Tensor):
        c = self.config
        expected = (c.frames, c.keypoints, c.feature_size, c.feature_size)
        if x.dim() != 5 or tuple(x.shape[1:]) != expected:
            raise ModelError(f"输入形状 {tuple(x.shape)} 与配置 batch×{expected} 不符", "MODEL_SHAPE")

    def stage1(self, x: torch.Tensor) -> torch.Tensor:
        B, F_, J, S, _ = x.shape
        y = x.reshape(B, F_, J * S, S)
        y = self.temporal(y).reshape(B, F_, J, S, S)
        return self.dropout(self.act(x + y))

    def stage2(self, x: torch.Tensor) -> torch.Tensor:
        B, F_, J, S, _ = x.shape
        flat = x.reshape(B, F_ * J, S, S)
        y = channel_shuffle(flat, F_)
        y = self.temporal_spatial(y)
        y = channel_shuffle(y, J)  # 恢复 帧优先 的通道顺序
        return self.dropout(self.act(flat + y)).reshape(B, F_, J, S, S)

    def stage3(self, x: torch.Tensor) -> torch.Tensor:
        B, F_, J, S, _ = x.shape
        per_frame = x.reshape(B * F_, J, S, S)
        y = self.spatial_a(per_frame)
        y = channel_shuffle(y, J)
        y = self.spatial_b(y)
        return self.dropout(self.act(per_frame + y)).reshape(B, F_, J, S, S)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        x = self.stage3(self.stage2(self.stage1(x)))
        B, F_, J, S, _ = x.shape
        pooled = self.pool(x.reshape(B, F_ * J, S, S))
        return self.classifier(pooled.flatten(1))


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def grouped_conv_counts(module: nn.Conv2d):
    """返回 (分组卷积参数量, 同形状普通卷积参数量)"""
    k = module.kernel_size[0] * module.kernel_size[1]
    standard = module.in_channels * module.out_channels * k
    return parameter_count(module), standard


def sstcn_forward(model: SSTCN, clips) -> np.ndarray:
    """对特征片段（单个或一批）计算分数；不改变模型的 train/eval 状态"""
    if isinstance(clips, KeypointFeatureClip):
        clips = [clips]
    arrays = np.stack([np.asarray(getattr(c, "data", c)) for c in clips])
    dtype = next(model.parameters()).dtype
    x = torch.tensor(arrays, dtype=dtype)
    with torch.no_grad():
        return model(x).cpu().numpy().astype(np.float64)
