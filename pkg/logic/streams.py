"""
输入流

把原始关键点序列转换成 SL-GCN 的四种输入流（关节、骨骼、关节运动、骨骼运动），
包括坐标归一化、定长采样和六种数据增强。
同一样本的四种流在增强之后派生，共享同一次随机变换。
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from logic.constants import (
    FRAME_WIDTH, FRAME_HEIGHT, SAMPLE_LENGTH,
    MIRROR_PROB, ROTATION_RANGE, SCALE_RANGE, JITTER_STD, SHIFT_RANGE,
    STREAMS,
)
from logic.errors import StreamError
from logic.graph import SkeletonGraph, mirror_permutation

logger = logging.getLogger('streams')

SAMPLING_MODES = ("repeat_pad_random", "uniform")
TEMPORAL_SAMPLING = ("random_window", "uniform")


@dataclass(frozen=True)
class KeypointSequence:
    """单个视频的关键点，data 形状 T × N × 3（x像素、y像素、置信度）"""
    data: np.ndarray = field(repr=False)
    frame_size: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT)
    sample_id: str = ""
    label: Optional[int] = None
    normalized: bool = False

    @classmethod
    def from_array(cls, data, frame_size=(FRAME_WIDTH, FRAME_HEIGHT), sample_id="",
                   label=None, normalized=False) -> "KeypointSequence":
        """读入时校验：T ≥ 1，无 NaN，置信度在 [0, 1]"""
        data = np.array(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise StreamError(f"{sample_id} 关键点形状必须是 T×N×3，实际 {data.shape}", "STREAM_SHAPE")
        if data.shape[0] < 1:
            raise StreamError(f"{sample_id} 没有任何帧", "STREAM_EMPTY")
        if not np.isfinite(data).all():
            raise StreamError(f"{sample_id} 关键点中含有 NaN 或 inf", "STREAM_NAN")
        conf = data[..., 2]
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise StreamError(f"{sample_id} 置信度超出 [0, 1]", "STREAM_CONFIDENCE")
        data.setflags(write=False)
        return cls(data, tuple(frame_size), sample_id, label, normalized)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "KeypointSequence":
        data = np.asarray(data, dtype=np.float64)
        data.setflags(write=False)
        return replace(self, data=data)


@dataclass(frozen=True)
class StreamTensor:
    kind: str
    data: np.ndarray = field(repr=False)
    normalized: bool = True

    def __post_init__(self):
        if self.kind not in STREAMS:
            raise StreamError(f"未知的输入流类型: {self.kind}", "STREAM_KIND")


@dataclass(frozen=True)
class AugmentationParams:
    mirror_prob: float = MIRROR_PROB
    rotation_range: float = ROTATION_RANGE
    scale_range: Tuple[float, float] = SCALE_RANGE
    jitter_std: float = JITTER_STD
    shift_range: float = SHIFT_RANGE
    temporal_sampling: str = "random_window"
    rng_seed: int = 0
    sample_length: int = SAMPLE_LENGTH

    def __post_init__(self):
        if not 0.0 <= self.mirror_prob <= 1.0:
            raise StreamError(f"mirror_prob 必须在 [0, 1]: {self.mirror_prob}", "STREAM_AUGMENT")
        if not 0.0 <= self.rotation_range <= np.pi:
            raise StreamError(f"rotation_range 必须在 [0, π]: {self.rotation_range}", "STREAM_AUGMENT")
        low, high = self.scale_range
        if low <= 0 or high < low:
            raise StreamError(f"scale_range 非法: {self.scale_range}", "STREAM_AUGMENT")
        if self.jitter_std < 0 or self.shift_range < 0:
            raise StreamError("jitter_std 与 shift_range 不能为负", "STREAM_AUGMENT")
        if self.temporal_sampling not in TEMPORAL_SAMPLING:
            raise StreamError(f"未知的时间采样方式: {self.temporal_sampling}", "STREAM_AUGMENT")
        if self.sample_length < 1:
            raise StreamError("sample_length 必须为正", "STREAM_AUGMENT")

    @classmethod
    def disabled(cls, sample_length: int = SAMPLE_LENGTH, temporal_sampling: str = "uniform",
                 rng_seed: int = 0) -> "AugmentationParams":
        """不做任何空间增强，只做时间采样"""
        return cls(0.0, 0.0, (1.0, 1.0), 0.0, 0.0, temporal_sampling, rng_seed, sample_length)


def sample_rng(seed: int, sample_id: str, epoch: int = 0) -> np.random.Generator:
    """由 (种子, 样本ID, epoch) 派生每个样本独立的随机数发生器"""
    digest = hashlib.sha256(f"{seed}:{epoch}:{sample_id}".encode('utf-8')).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def normalize_coords(seq: KeypointSequence) -> KeypointSequence:
    """把像素坐标映射到 [-1, 1]：x' = 2x/W − 1，y' = 2y/H − 1"""
    width, height = seq.frame_size
    if width <= 0 or height <= 0:
        raise StreamError(f"{seq.sample_id} 画面尺寸非法: {seq.frame_size}", "STREAM_FRAME_SIZE")
    if seq.normalized:
        return seq
    data = np.array(seq.data)
    data[..., 0] = 2.0 * data[..., 0] / width - 1.0
    data[..., 1] = 2.0 * data[..., 1] / height - 1.0
    return replace(seq.with_data(data), normalized=True)


def sample_frames(seq: KeypointSequence, target_len: int = SAMPLE_LENGTH,
                  mode: str = "uniform", rng: Optional[np.random.Generator] = None) -> KeypointSequence:
    """
    把序列变成 target_len 帧

    repeat_pad_random: 先把视频重复到不少于 target_len 帧，再随机取一个窗口
    uniform: 取下标 floor(i·T/target_len)
    """
    if mode not in SAMPLING_MODES:
        raise StreamError(f"未知的采样方式: {mode}", "STREAM_SAMPLING")
    T = seq.num_frames
    if T < 1:
        raise StreamError(f"{seq.sample_id} 没有任何帧", "STREAM_EMPTY")

    if mode == "uniform":
        indices = (np.arange(target_len) * T) // target_len
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        repeats = -(-target_len // T)
        tiled = np.tile(np.arange(T), repeats)
        start = int(rng.integers(0, len(tiled) - target_len + 1))
        indices = tiled[start:start + target_len]
    return seq.with_data(seq.data[indices])


def compute_bones(joints: StreamTensor, topology: SkeletonGraph) -> StreamTensor:
    """骨骼向量：每根骨骼 (i, j) 在节点 j 处记录 target − source，置信度取 target；根节点为 (0, 0, s_root)"""
    if joints.kind != "joint":
        raise StreamError(f"骨骼只能由关节流计算，收到 {joints.kind}", "STREAM_KIND")
    data = joints.data
    if data.shape[1] != topology.num_nodes:
        raise StreamError(
            f"关节流有 {data.shape[1]} 个节点，骨架图有 {topology.num_nodes} 个", "STREAM_NODE_MISMATCH")
    bones = np.array(data, dtype=np.float64)
    bones[:, :, :2] = 0.0
    if topology.bones:
        src = np.array([b[0] for b in topology.bones])
        dst = np.array([b[1] for b in topology.bones])
        bones[:, dst, :2] = data[:, dst, :2] - data[:, src, :2]
    return StreamTensor("bone", bones, joints.normalized)


def compute_motion(stream: StreamTensor) -> StreamTensor:
    """
    相邻帧差分，最后一帧补零

    关节运动只对 x、y 差分并保留 s_t；骨骼运动对三个通道都差分。
    """
    if stream.kind not in ("joint", "bone"):
        raise StreamError(f"不能对 {stream.kind} 再求运动", "STREAM_KIND")
    data = stream.data
    if data.shape[0] < 2:
        raise StreamError("计算运动流至少需要2帧", "STREAM_TOO_SHORT")
    motion = np.zeros_like(data, dtype=np.float64)
    if stream.kind == "joint":
        motion[:-1, :, :2] = data[1:, :, :2] - data[:-1, :, :2]
        motion[:-1, :, 2] = data[:-1, :, 2]
        kind = "joint_motion"
    else:
        motion[:-1] = data[1:] - data[:-1]
        kind = "bone_motion"
    return StreamTensor(kind, motion, stream.normalized)


def build_stream(seq: KeypointSequence, kind: str, graph: SkeletonGraph) -> StreamTensor:
    """由（已归一化、采样、增强的）序列派生指定的输入流"""
    if kind not in STREAMS:
        raise StreamError(f"未知的输入流类型: {kind}", "STREAM_KIND")
    joints = StreamTensor("joint", np.array(seq.data), seq.normalized)
    if kind == "joint":
        return joints
    if kind == "joint_motion":
        return compute_motion(joints)
    bones = compute_bones(joints, graph)
    return bones if kind == "bone" else compute_motion(bones)


# ---------------------------------------------------------------------------
# 数据增强
# ---------------------------------------------------------------------------

def mirror(seq: KeypointSequence, permutation: np.ndarray) -> KeypointSequence:
    """x 取反并交换左右节点"""
    data = np.array(seq.data[:, permutation])
    data[..., 0] = -data[..., 0]
    return seq.with_data(data)


def rotate(seq: KeypointSequence, theta: float) -> KeypointSequence:
    """绕原点旋转 theta 弧度"""
    c, s = np.cos(theta), np.sin(theta)
    data = np.array(seq.data)
    x, y = seq.data[..., 0], seq.data[..., 1]
    data[..., 0] = c * x - s * y
    data[..., 1] = s * x + c * y
    return seq.with_data(data)


def augment(seq: KeypointSequence, params: AugmentationParams, graph: Optional[SkeletonGraph] = None,
            rng: Optional[np.random.Generator] = None) -> KeypointSequence:
    """
    依次做：时间采样、镜像、旋转、缩放、抖动、平移

    rng 为空时由 (params.rng_seed, seq.sample_id) 派生，
    相同种子得到完全相同的输出。镜像需要 graph 提供左右节点对。
    """
    if not seq.normalized:
        raise StreamError(f"{seq.sample_id} 未归一化，不能做增强", "STREAM_UNNORMALIZED")
    rng = rng if rng is not None else sample_rng(params.rng_seed, seq.sample_id)

    mode = "repeat_pad_random" if params.temporal_sampling == "random_window" else "uniform"
    out = sample_frames(seq, params.sample_length, mode, rng)

    if params.mirror_prob > 0 and rng.random() < params.mirror_prob:
        if graph is None:
            raise StreamError("镜像增强需要骨架图", "STREAM_AUGMENT")
        out = mirror(out, mirror_permutation(graph))

    if params.rotation_range > 0:
        out = rotate(out, rng.uniform(-params.rotation_range, params.rotation_range))

    data = np.array(out.data)
    low, high = params.scale_range
    if high > low:
        data[..., :2] *= rng.uniform(low, high)
    elif low != 1.0:
        data[..., :2] *= low
    if params.jitter_std > 0:
        data[..., :2] += rng.normal(0.0, params.jitter_std, size=data[..., :2].shape)
    if params.shift_range > 0:
        data[..., :2] += rng.uniform(-params.shift_range, params.shift_range, size=2)
    return out.with_data(data)
