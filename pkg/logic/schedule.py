"""
训练计划：学习率与权重衰减在里程碑 epoch 切换（epoch 从0开始计数）
"""

from dataclasses import dataclass
from typing import Tuple

from logic.constants import (
    INITIAL_LR, INITIAL_WEIGHT_DECAY, LR_MILESTONES, TOTAL_EPOCHS, BATCH_SIZE, DEFAULT_SEED,
)
from logic.errors import ConfigError


@dataclass(frozen=True)
class TrainSchedule:
    initial_lr: float = INITIAL_LR
    initial_weight_decay: float = INITIAL_WEIGHT_DECAY
    milestones: Tuple[Tuple[int, float, float], ...] = LR_MILESTONES  # (epoch, lr, weight_decay)
    total_epochs: int = TOTAL_EPOCHS
    batch_size: int = BATCH_SIZE
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.initial_lr <= 0 or self.initial_weight_decay < 0:
            raise ConfigError("初始学习率必须为正，权重衰减不能为负", "CONFIG_SCHEDULE")
        if self.total_epochs < 0:
            raise ConfigError(f"总epoch数不能为负: {self.total_epochs}", "CONFIG_SCHEDULE")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size 必须为正: {self.batch_size}", "CONFIG_SCHEDULE")
        previous = 0
        for epoch, lr, wd in self.milestones:
            if epoch <= previous:
                raise ConfigError(f"里程碑必须严格递增且为正: {self.milestones}", "CONFIG_SCHEDULE")
            if lr <= 0 or wd < 0:
                raise ConfigError(f"里程碑 {epoch} 的学习率或权重衰减非法", "CONFIG_SCHEDULE")
            previous = epoch
        # 0 个 epoch 的空运行不受里程碑约束
        if self.total_epochs and self.milestones and self.total_epochs < self.milestones[-1][0]:
            raise ConfigError(
                f"总epoch数 {self.total_epochs} 小于最后一个里程碑 {self.milestones[-1][0]}", "CONFIG_SCHEDULE")

    def lr_at(self, epoch: int) -> float:
        lr = self.initial_lr
        for start, value, _ in self.milestones:
            if epoch >= start:
                lr = value
        return lr

    def weight_decay_at(self, epoch: int) -> float:
        wd = self.initial_weight_decay
        for start, _, value in self.milestones:
            if epoch >= start:
                wd = value
        return wd


def parse_milestones(text: str) -> Tuple[Tuple[int, float, float], ...]:
    """解析 "50:1e-4:0, 100:1e-5:0"，空字符串表示没有里程碑"""
    milestones = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(f"里程碑格式应为 epoch:lr:weight_decay，实际 '{item}'", "CONFIG_SCHEDULE")
        try:
            milestones.append((int(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError:
            raise ConfigError(f"无法解析里程碑 '{item}'", "CONFIG_SCHEDULE")
    return tuple(milestones)
