"""
SL-GCN

解耦图卷积 + STC 注意力 + 时间卷积 + DropGraph，10个 block 后全局平均池化、全连接分类。
输入张量形状为 batch × C × T × N（通道优先）。
"""

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from logic.constants import (
    SLGCN_CHANNELS, SLGCN_STRIDES, SLGCN_GROUPS, TEMPORAL_KERNEL,
    DROPGRAPH_KEEP_PROB, DROPGRAPH_BLOCK_HOPS, DROPGRAPH_FIRST_BLOCK,
    LABEL_SMOOTHING, DEFAULT_SEED,
)
from logic.errors import ModelError, TrainingError
from logic.graph import (
    SkeletonGraph, NormalizedAdjacency, normalize_adjacency, neighborhood_mask,
)
from logic.losses import LabelSmoothingCrossEntropy, activation_module

logger = logging.getLogger('slgcn')


@dataclass(frozen=True)
class SLGCNConfig:
    num_classes: int
    blocks: Tuple[Tuple[int, int, int], ...] = ()
    in_channels: int = 3
    groups: int = SLGCN_GROUPS
    temporal_kernel: int = TEMPORAL_KERNEL
    attention: bool = True
    keep_prob: float = DROPGRAPH_KEEP_PROB
    block_hops: int = DROPGRAPH_BLOCK_HOPS
    drop_first_block: int = DROPGRAPH_FIRST_BLOCK
    partition_strategy: str = "spatial"
    activation: str = "relu"
    zero_init_classifier: bool = False
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.num_classes < 1:
            raise ModelError(f"类别数必须为正: {self.num_classes}", "MODEL_CONFIG")
        if not self.blocks:
            raise ModelError("至少需要一个 block", "MODEL_CONFIG")
        expected_in = self.in_channels
        for index, (c_in, c_out, stride) in enumerate(self.blocks, start=1):
            if c_in != expected_in:
                raise ModelError(f"第{index}个 block 输入通道 {c_in} 与上一层输出 {expected_in} 不衔接", "MODEL_CONFIG")
            if stride not in (1, 2):
                raise ModelError(f"第{index}个 block 步长必须是1或2: {stride}", "MODEL_CONFIG")
            if c_out % self.groups:
                raise ModelError(f"第{index}个 block 输出通道 {c_out} 不能被分组数 {self.groups} 整除", "MODEL_CONFIG")
            expected_in = c_out
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ModelError(f"时间卷积核必须是正奇数: {self.temporal_kernel}", "MODEL_CONFIG")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ModelError(f"keep_prob 必须在 (0, 1]: {self.keep_prob}", "MODEL_DROPGRAPH")
        if self.block_hops < 0:
            raise ModelError("block_hops 不能为负", "MODEL_DROPGRAPH")

    @classmethod
    def default(cls, num_classes: int, **overrides) -> "SLGCNConfig":
        return cls(num_classes=num_classes, blocks=channel_plan(SLGCN_CHANNELS, SLGCN_STRIDES), **overrides)

    @property
    def out_channels(self) -> int:
        return self.blocks[-1][1]


def channel_plan(channels: Sequence[int], strides: Sequence[int], in_channels: int = 3):
    """由每个 block 的输出通道和步长得到 (in, out, stride) 列表"""
    if len(channels) != len(strides):
        raise ModelError("通道数列表与步长列表长度不同", "MODEL_CONFIG")
    plan = []
    prev = in_channels
    for c, s in zip(channels, strides):
        plan.append((prev, int(c), int(s)))
        prev = int(c)
    return tuple(plan)


def _conv_init(conv: nn.Conv2d):
    nn.init.kaiming_normal_(conv.weight, mode='fan_out')
    if conv.bias is not None:
        nn.init.constant_(conv.bias, 0)


def _bn_init(bn: nn.BatchNorm2d, scale: float):
    nn.init.constant_(bn.weight, scale)
    nn.init.constant_(bn.bias, 0)


class DecoupledGCN(nn.Module):
    """
    解耦图卷积

    先做逐点变换 W（in → K·out），再把输出通道分成 G 组，
    每组用自己的可训练邻接矩阵沿节点维相乘，各分区求和。
    """

    def __init__(self, in_channels: int, out_channels: int, adjacency: NormalizedAdjacency, groups: int = 1):
        super().__init__()
        if out_channels % groups:
            raise ModelError(f"输出通道 {out_channels} 不能被分组数 {groups} 整除", "MODEL_GROUPS")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.groups = groups
        self.num_partitions = adjacency.num_partitions
        self.num_nodes = adjacency.num_nodes

        self.weight = nn.Parameter(torch.empty(in_channels, self.num_partitions * out_channels))
        nn.init.normal_(self.weight, 0, math.sqrt(0.5 / (self.num_partitions * out_channels)))
        A = torch.tensor(np.array(adjacency.partitions), dtype=torch.float32)
        self.adjacency = nn.Parameter(A.unsqueeze(1).repeat(1, groups, 1, 1).contiguous())

    def group_adjacency(self) -> torch.Tensor:
        """每个输出通道使用的邻接矩阵，形状 K × out × N × N"""
        return self.adjacency.repeat_interleave(self.out_channels // self.groups, dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels or x.shape[3] != self.num_nodes:
            raise ModelError(
                f"输入形状 {tuple(x.shape)} 与图卷积层 (C={self.in_channels}, N={self.num_nodes}) 不符",
                "MODEL_SHAPE")
        B, _, T, N = x.shape
        y = torch.einsum('nctv,cd->ndtv', x, self.weight)
        y = y.reshape(B, self.num_partitions, self.out_channels, T, N)
        return torch.einsum('nkctv,kcvw->nctw', y, self.group_adjacency())


class STCAttention(nn.Module):
    """
    级联的空间、时间、通道注意力，门值在 (0, 1) 内逐元素相乘

    初始化时时间门卷积和通道门第二层为零，所以这两个门从 0.5 开始。
    force_gates(v) 把三个门都固定为常数 v。
    """

    def __init__(self, channels: int, num_nodes: int, temporal_kernel: int = 9, reduction: int = 2,
                 activation: str = "relu"):
        super().__init__()
        spatial_kernel = num_nodes if num_nodes % 2 else num_nodes - 1
        self.conv_sa = nn.Conv1d(channels, 1, spatial_kernel, padding=(spatial_kernel - 1) // 2)
        nn.init.xavier_normal_(self.conv_sa.weight)
        nn.init.constant_(self.conv_sa.bias, 0)

        self.conv_ta = nn.Conv1d(channels, 1, temporal_kernel, padding=(temporal_kernel - 1) // 2)
        nn.init.constant_(self.conv_ta.weight, 0)
        nn.init.constant_(self.conv_ta.bias, 0)

        hidden = max(1, channels // reduction)
        self.fc1c = nn.Linear(channels, hidden)
        self.fc2c = nn.Linear(hidden, channels)
        nn.init.kaiming_normal_(self.fc1c.weight)
        nn.init.constant_(self.fc1c.bias, 0)
        nn.init.constant_(self.fc2c.weight, 0)
        nn.init.constant_(self.fc2c.bias, 0)

        self.act = activation_module(activation)
        self.forced_gate: Optional[float] = None

    def force_gates(self, value: Optional[float]):
        self.forced_gate = value

    def gates(self, x: torch.Tensor):
        """返回 (空间门 B×1×1×N, 时间门 B×1×T×1, 通道门 B×C×1×1)，按级联顺序计算"""
        if self.forced_gate is not None:
            B, C, T, N = x.shape
            v = float(self.forced_gate)
            return (x.new_full((B, 1, 1, N), v), x.new_full((B, 1, T, 1), v), x.new_full((B, C, 1, 1), v))
        spatial = torch.sigmoid(self.conv_sa(x.mean(-2))).unsqueeze(-2)
        y = x * spatial
        temporal = torch.sigmoid(self.conv_ta(y.mean(-1))).unsqueeze(-1)
        y = y * temporal
        hidden = self.act(self.fc1c(y.mean(-1).mean(-1)))
        channel = torch.sigmoid(self.fc2c(hidden)).unsqueeze(-1).unsqueeze(-1)
        return spatial, temporal, channel

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        spatial, temporal, channel = self.gates(x)
        return x * spatial * temporal * channel


class TemporalConv(nn.Module):
    """k_t × 1 时间卷积 + BN，padding (k_t−1)/2"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 9, stride: int = 1):
        super().__init__()
        pad = (kernel_size - 1) // 2
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=(kernel_size, 1),
                              padding=(pad, 0), stride=(stride, 1), bias=False)
        self.bn = nn.BatchNorm2d(out_channels)
        _conv_init(self.conv)
        _bn_init(self.bn, 1)

    def forward(self, x):
        return self.bn(self.conv(x))


class DropGraph(nn.Module):
    """
    训练时随机选种子节点，把它和 block_hops 跳内的邻居一起置零，
    剩余节点按 N / 保留数 放大。eval 模式或 keep_prob = 1 时是恒等映射。
    """

    def __init__(self, graph: SkeletonGraph, keep_prob: float = DROPGRAPH_KEEP_PROB,
                 block_hops: int = DROPGRAPH_BLOCK_HOPS, generator: Optional[torch.Generator] = None):
        super().__init__()
        if not 0.0 < keep_prob <= 1.0:
            raise ModelError(f"keep_prob 必须在 (0, 1]: {keep_prob}", "MODEL_DROPGRAPH")
        self.keep_prob = keep_prob
        self.block_hops = block_hops
        mask = neighborhood_mask(graph, block_hops).astype(np.float32)
        self.register_buffer("neighborhood", torch.tensor(mask), persistent=False)
        self.gamma = seed_probability(graph, keep_prob, block_hops)
        self.generator = generator
        self.frozen = False
        self._cached_mask: Optional[torch.Tensor] = None

    def sample_mask(self, batch: int) -> torch.Tensor:
        """每个样本一行，1 保留，0 丢弃"""
        N = self.neighborhood.shape[0]
        neighborhood = self.neighborhood.cpu()
        seeds = (torch.rand(batch, N, generator=self.generator) < self.gamma).to(neighborhood.dtype)
        dropped = (seeds @ neighborhood) > 0
        return (~dropped).float()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.keep_prob >= 1.0:
            return x
        B, N = x.shape[0], x.shape[-1]
        if self.frozen and self._cached_mask is not None and self._cached_mask.shape[0] == B:
            mask = self._cached_mask
        else:
            mask = self.sample_mask(B)
            if self.frozen:
                self._cached_mask = mask
        kept = mask.sum(dim=1, keepdim=True).clamp(min=1.0)
        scale = (mask * N / kept).to(device=x.device, dtype=x.dtype)
        return x * scale[:, None, None, :]


def seed_probability(graph: SkeletonGraph, keep_prob: float, block_hops: int) -> float:
    """种子概率 γ = (1 − keep_prob) / 平均邻域大小"""
    sizes = neighborhood_mask(graph, block_hops).sum(axis=1)
    return (1.0 - keep_prob) / float(sizes.mean())


def expected_drop_fraction(graph: SkeletonGraph, keep_prob: float, block_hops: int) -> float:
    """被置零节点的期望比例：mean_v [1 − (1 − γ)^|N(v)|]"""
    gamma = seed_probability(graph, keep_prob, block_hops)
    sizes = neighborhood_mask(graph, block_hops).sum(axis=1)
    return float(np.mean(1.0 - (1.0 - gamma) ** sizes))


def drop_graph(x: torch.Tensor, graph: SkeletonGraph, keep_prob: float, block_hops: int = 1,
               training: bool = True, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """函数形式的 DropGraph"""
    layer = DropGraph(graph, keep_prob, block_hops, generator)
    layer.train(training)
    return layer(x)


class SLGCNBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, graph: SkeletonGraph, adjacency: NormalizedAdjacency,
                 stride: int = 1, residual: bool = True, groups: int = SLGCN_GROUPS,
                 temporal_kernel: int = TEMPORAL_KERNEL, attention: bool = True,
                 drop: Optional[DropGraph] = None, activation: str = "relu"):
        super().__init__()
        self.gcn = DecoupledGCN(in_channels, out_channels, adjacency, groups)
        self.gcn_bn = nn.BatchNorm2d(out_channels)
        _bn_init(self.gcn_bn, 1e-6)
        if in_channels != out_channels:
            self.gcn_down = nn.Sequential(nn.Conv2d(in_channels, out_channels, 1, bias=False),
                                          nn.BatchNorm2d(out_channels))
            _conv_init(self.gcn_down[0])
            _bn_init(self.gcn_down[1], 1)
        else:
            self.gcn_down = nn.Identity()

        self.attention = None
        if attention:
            self.attention = STCAttention(out_channels, graph.num_nodes, temporal_kernel, activation=activation)
        self.tcn = TemporalConv(out_channels, out_channels, temporal_kernel, stride)

        if not residual:
            self.residual = None
        elif in_channels == out_channels and stride == 1:
            self.residual = nn.Identity()
        else:
            self.residual = TemporalConv(in_channels, out_channels, kernel_size=1, stride=stride)

        self.drop = drop
        self.act = activation_module(activation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.act(self.gcn_bn(self.gcn(x)) + self.gcn_down(x))
        if self.attention is not None:
            y = self.attention(y)
        z = self.tcn(y)
        if self.residual is not None:
            z = z + self.residual(x)
        if self.drop is not None:
            z = self.drop(z)
        return self.act(z)


class SLGCN(nn.Module):
    def __init__(self, config: SLGCNConfig, graph: SkeletonGraph):
        super().__init__()
        self.config = config
        self.graph = graph
        self.num_nodes = graph.num_nodes
        adjacency = normalize_adjacency(graph, config.partition_strategy)

        self.generator = torch.Generator()
        self.generator.manual_seed(config.seed)

        self.data_bn = nn.BatchNorm1d(config.in_channels * graph.num_nodes)
        nn.init.constant_(self.data_bn.weight, 1)
        nn.init.constant_(self.data_bn.bias, 0)

        blocks = []
        for index, (c_in, c_out, stride) in enumerate(config.blocks, start=1):
            drop = None
            if index >= config.drop_first_block and config.keep_prob < 1.0:
                drop = DropGraph(graph, config.keep_prob, config.block_hops, self.generator)
            blocks.append(SLGCNBlock(
                c_in, c_out, graph, adjacency, stride=stride, residual=index > 1,
                groups=config.groups, temporal_kernel=config.temporal_kernel,
                attention=config.attention, drop=drop, activation=config.activation))
        self.blocks = nn.ModuleList(blocks)

        self.fc = nn.Linear(config.out_channels, config.num_classes)
        if config.zero_init_classifier:
            nn.init.constant_(self.fc.weight, 0)
        else:
            nn.init.normal_(self.fc.weight, 0, math.sqrt(2.0 / config.num_classes))
        nn.init.constant_(self.fc.bias, 0)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4:
            raise ModelError(f"输入必须是 batch×C×T×N，实际 {tuple(x.shape)}", "MODEL_SHAPE")
        B, C, T, N = x.shape
        if N != self.num_nodes:
            raise ModelError(f"输入有 {N} 个节点，模型的图有 {self.num_nodes} 个", "MODEL_NODE_MISMATCH")
        if C != self.config.in_channels:
            raise ModelError(f"输入有 {C} 个通道，模型需要 {self.config.in_channels} 个", "MODEL_SHAPE")
        x = x.permute(0, 3, 1, 2).reshape(B, N * C, T)
        x = self.data_bn(x)
        x = x.reshape(B, N, C, T).permute(0, 2, 3, 1).contiguous()
        for block in self.blocks:
            x = block(x)
        return x.mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(x))

    def drop_layers(self):
        return [m for m in self.modules() if isinstance(m, DropGraph)]


@contextmanager
def frozen_drop_masks(model: nn.Module):
    """在上下文内 DropGraph 每层只采样一次掩码，之后的前向重复使用"""
    layers = [m for m in model.modules() if isinstance(m, DropGraph)]
    for layer in layers:
        layer.frozen = True
        layer._cached_mask = None
    try:
        yield
    finally:
        for layer in layers:
            layer.frozen = False
            layer._cached_mask = None


def streams_to_tensor(batch, dtype=torch.float32) -> torch.Tensor:
    """StreamTensor 列表或 B×T×N×3 数组 → batch × 3 × T × N"""
    arrays = [getattr(item, "data", item) for item in batch]
    stacked = np.stack([np.asarray(a) for a in arrays])
    if stacked.ndim != 4:
        raise ModelError(f"输入流必须是 T×N×3，实际批量形状 {stacked.shape}", "MODEL_SHAPE")
    return torch.tensor(stacked, dtype=dtype).permute(0, 3, 1, 2).contiguous()


def slgcn_forward(model: SLGCN, batch) -> np.ndarray:
    """对一批输入流计算 softmax 前的分数，形状 batch × n_c；不改变模型的 train/eval 状态"""
    dtype = next(model.parameters()).dtype
    x = streams_to_tensor(batch, dtype)
    with torch.no_grad():
        return model(x).cpu().numpy().astype(np.float64)


def first_non_finite(model: nn.Module, use_grad: bool = False) -> Optional[str]:
    """返回第一个含有 NaN/inf 的参数名（或其梯度）"""
    for name, param in model.named_parameters():
        tensor = param.grad if use_grad else param
        if tensor is not None and not torch.isfinite(tensor).all():
            return name
    return None


def loss_and_grad(model: nn.Module, inputs: torch.Tensor, labels: torch.Tensor,
                  epsilon: float = LABEL_SMOOTHING) -> Tuple[float, Dict[str, torch.Tensor]]:
    """
    计算平滑交叉熵及所有可训练参数的梯度

    调用期间 DropGraph 掩码固定；未参与计算的参数梯度为全零。
    """
    criterion = LabelSmoothingCrossEntropy(epsilon)
    model.zero_grad(set_to_none=True)
    with frozen_drop_masks(model):
        logits = model(inputs)
        loss = criterion(logits, labels)
        if not torch.isfinite(loss):
            culprit = first_non_finite(model) or "logits"
            raise TrainingError(f"损失不是有限值，问题参数: {culprit}", "LOSS_NON_FINITE")
        loss.backward()
    culprit = first_non_finite(model, use_grad=True)
    if culprit is not None:
        raise TrainingError(f"梯度不是有限值，问题参数: {culprit}", "GRADIENT_NON_FINITE")
    grads = {}
    for name, param in model.named_parameters():
        if param.requires_grad:
            grads[name] = param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
    return float(loss.detach()), grads
