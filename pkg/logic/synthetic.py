"""
合成数据集

每个类别对应一个运动方向区间：手臂和手在该方向上做一次往返运动，
位移随骨骼树深度增大（根节点不动）。不同类别的方向区间互不重叠，所以类别可分。
同时生成 SL-GCN 用的关键点文件和 SSTCN 用的高斯热图特征片段，两者几何一致。
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from logic.config import as_bool, as_float, as_int, read_key_values, resolve_root
from logic.constants import FRAME_WIDTH, FRAME_HEIGHT, DEFAULT_SEED
from logic.errors import DataError, SamSlrError
from logic.file_formats import ManifestRow, write_feature_clip, write_keypoints, write_manifest
from logic.graph import SkeletonGraph, default_slr_graph, load_layout, load_selection, reduce_graph
from logic.sstcn import pool_features

logger = logging.getLogger('synthetic')

SYNTH_KEYS = {
    "root", "num_classes", "samples_per_class", "frames", "noise", "seed",
    "graph_layout", "graph_selection", "features", "feature_frames", "feature_size", "feature_scale",
    "val_fraction", "test_fraction", "directions", "amplitude_min", "amplitude_max",
}


def default_directions(num_classes: int, margin: float = 0.1) -> Tuple[Tuple[float, float], ...]:
    """把圆周等分成 num_classes 个扇区，两侧各留 margin 比例的间隔（单位：度）"""
    width = 360.0 / num_classes
    return tuple((k * width + margin * width, (k + 1) * width - margin * width) for k in range(num_classes))


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    samples_per_class: int = 50
    frames: int = 32
    noise: float = 0.0  # 归一化坐标下的高斯噪声标准差
    seed: int = DEFAULT_SEED
    graph: Optional[SkeletonGraph] = field(default=None, repr=False)
    features: bool = True
    feature_frames: int = 60
    feature_size: int = 24
    feature_scale: int = 2  # 先按 feature_scale 倍尺寸绘制，再最大池化
    val_fraction: float = 0.2
    test_fraction: float = 0.0
    directions: Tuple[Tuple[float, float], ...] = ()
    amplitude_range: Tuple[float, float] = (0.1, 0.3)
    frame_size: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT)

    def __post_init__(self):
        if self.num_classes < 1 or self.samples_per_class < 1:
            raise DataError("类别数和每类样本数必须为正", "SYNTH_SPEC")
        if self.frames < 2:
            raise DataError(f"帧数至少为2: {self.frames}", "SYNTH_SPEC")
        if self.noise < 0:
            raise DataError(f"噪声不能为负: {self.noise}", "SYNTH_SPEC")
        if self.feature_frames < 1 or self.feature_size < 1 or self.feature_scale < 1:
            raise DataError("特征片段尺寸必须为正", "SYNTH_SPEC")
        if self.val_fraction < 0 or self.test_fraction < 0 or self.val_fraction + self.test_fraction >= 1:
            raise DataError("验证集与测试集比例之和必须小于1", "SYNTH_SPEC")
        low, high = self.amplitude_range
        if not 0 < low <= high:
            raise DataError(f"幅度区间非法: {self.amplitude_range}", "SYNTH_SPEC")
        directions = tuple(self.directions) or default_directions(self.num_classes)
        if len(directions) != self.num_classes:
            raise DataError(f"方向区间数 {len(directions)} 与类别数 {self.num_classes} 不符", "SYNTH_SPEC")
        for lo, hi in directions:
            if not lo < hi or hi - lo >= 360:
                raise DataError(f"方向区间非法: ({lo}, {hi})", "SYNTH_SPEC")
        ordered = sorted((lo % 360, lo % 360 + (hi - lo)) for lo, hi in directions)
        for (lo_a, hi_a), (lo_b, hi_b) in zip(ordered, ordered[1:] + [(ordered[0][0] + 360, 0)]):
            if hi_a > lo_b:
                raise DataError(f"类别方向区间重叠: ({lo_a}, {hi_a}) 与 ({lo_b % 360}, ...)", "SYNTH_OVERLAP")
        object.__setattr__(self, "directions", directions)
        if self.graph is None:
            object.__setattr__(self, "graph", default_slr_graph())

    @property
    def num_samples(self) -> int:
        return self.num_classes * self.samples_per_class


def load_synthetic_spec(path) -> SyntheticSpec:
    """读取 key = value 形式的合成数据描述"""
    path = Path(path)
    values = read_key_values(path)
    unknown = sorted(set(values) - SYNTH_KEYS)
    if unknown:
        raise DataError(f"未知的合成数据配置项: {', '.join(unknown)}", "SYNTH_SPEC")
    root = resolve_root(values, path.resolve().parent)

    graph = None
    if values.get("graph_layout"):
        graph = load_layout(root / values["graph_layout"])
        if values.get("graph_selection"):
            graph = reduce_graph(graph, load_selection(root / values["graph_selection"]))

    directions = ()
    if values.get("directions"):
        pairs = []
        for item in values["directions"].split(","):
            parts = item.strip().split(":")
            if len(parts) != 2:
                raise DataError(f"方向区间格式应为 lo:hi，实际 '{item}'", "SYNTH_SPEC")
            try:
                pairs.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise DataError(f"无法解析方向区间 '{item}'", "SYNTH_SPEC")
        directions = tuple(pairs)

    try:
        return SyntheticSpec(
            num_classes=as_int(values, "num_classes", 4),
            samples_per_class=as_int(values, "samples_per_class", 50),
            frames=as_int(values, "frames", 32),
            noise=as_float(values, "noise", 0.0),
            seed=as_int(values, "seed", DEFAULT_SEED),
            graph=graph,
            features=as_bool(values, "features", True),
            feature_frames=as_int(values, "feature_frames", 60),
            feature_size=as_int(values, "feature_size", 24),
            feature_scale=as_int(values, "feature_scale", 2),
            val_fraction=as_float(values, "val_fraction", 0.2),
            test_fraction=as_float(values, "test_fraction", 0.0),
            directions=directions,
            amplitude_range=(as_float(values, "amplitude_min", 0.1), as_float(values, "amplitude_max", 0.3)),
        )
    except DataError:
        raise
    except SamSlrError as e:
        raise DataError(str(e), e.tag)


# ---------------------------------------------------------------------------
# 骨架几何
# ---------------------------------------------------------------------------

def tree_depths(graph: SkeletonGraph) -> np.ndarray:
    """骨骼树中每个节点到根的深度"""
    children: Dict[int, List[int]] = {}
    for src, dst in graph.bones:
        children.setdefault(src, []).append(dst)
    depth = np.zeros(graph.num_nodes)
    queue = deque([graph.root])
    while queue:
        node = queue.popleft()
        for child in children.get(node, []):
            depth[child] = depth[node] + 1
            queue.append(child)
    return depth


def rest_pose(graph: SkeletonGraph) -> np.ndarray:
    """沿骨骼树向下展开的静止姿态（归一化坐标，N × 2）"""
    children: Dict[int, List[int]] = {}
    for src, dst in graph.bones:
        children.setdefault(src, []).append(dst)
    pose = np.zeros((graph.num_nodes, 2))
    pose[graph.root] = (0.0, -0.3)
    heading = {graph.root: math.pi / 2}
    queue = deque([(graph.root, 0)])
    while queue:
        node, depth = queue.popleft()
        kids = sorted(children.get(node, []))
        length = 0.12 * 0.8 ** depth
        for k, child in enumerate(kids):
            angle = heading[node] + (k - (len(kids) - 1) / 2) * 0.5
            heading[child] = angle
            pose[child] = pose[node] + length * np.array([math.cos(angle), math.sin(angle)])
            queue.append((child, depth + 1))
    return pose


def extra_keypoints(graph: SkeletonGraph, positions: np.ndarray) -> np.ndarray:
    """
    特征片段比骨架图多出的关键点：嘴部4个点和两只手的无名指指尖

    只有默认27节点图（有 nose、*_ring1、*_hand_root 节点）才补这6个点，
    positions 形状 T × N × 2，返回 T × 6 × 2（其他图返回 T × 0 × 2）。
    """
    labels = graph.node_labels
    needed = ("nose", "left_ring1", "right_ring1", "left_hand_root", "right_hand_root")
    if not all(name in labels for name in needed):
        return np.zeros((positions.shape[0], 0, 2))
    nose = positions[:, labels.index("nose")]
    mouth = [nose + np.array(offset) for offset in ((-0.03, 0.05), (0.03, 0.05), (0.0, 0.04), (0.0, 0.07))]
    tips = []
    for side in ("left", "right"):
        ring = positions[:, labels.index(f"{side}_ring1")]
        root = positions[:, labels.index(f"{side}_hand_root")]
        tips.append(ring + 0.5 * (ring - root))
    return np.stack(mouth + tips, axis=1)


def feature_keypoint_count(graph: SkeletonGraph) -> int:
    extra = extra_keypoints(graph, np.zeros((1, graph.num_nodes, 2))).shape[1]
    return graph.num_nodes + extra


def heatmaps(points: np.ndarray, size: int) -> np.ndarray:
    """每个点画一个高斯峰，points 形状 F × J × 2（归一化坐标），返回 F × J × size × size"""
    sigma = size / 12.0
    grid = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    gx = (grid[None, None, None, :] - points[..., 0, None, None]) * size / 2.0
    gy = (grid[None, None, :, None] - points[..., 1, None, None]) * size / 2.0
    return np.exp(-(gx ** 2 + gy ** 2) / (2 * sigma ** 2))


# ---------------------------------------------------------------------------
# 样本生成
# ---------------------------------------------------------------------------

def class_motion(spec: SyntheticSpec, label: int, rng: np.random.Generator) -> Tuple[float, float]:
    lo, hi = spec.directions[label]
    theta = math.radians(rng.uniform(lo, hi))
    amplitude = rng.uniform(*spec.amplitude_range)
    return theta, amplitude


def sample_positions(spec: SyntheticSpec, label: int, index: int) -> np.ndarray:
    """单个样本的归一化坐标轨迹，T × N × 2"""
    rng = np.random.default_rng([spec.seed, label, index])
    graph = spec.graph
    depth = tree_depths(graph)
    weight = depth / max(depth.max(), 1.0)
    theta, amplitude = class_motion(spec, label, rng)
    direction = np.array([math.cos(theta), math.sin(theta)])
    t = np.arange(spec.frames)
    envelope = np.sin(np.pi * t / (spec.frames - 1))
    offsets = amplitude * envelope[:, None, None] * weight[None, :, None] * direction[None, None, :]
    positions = rest_pose(graph)[None] + offsets
    if spec.noise > 0:
        positions = positions + rng.normal(0.0, spec.noise, size=positions.shape)
    return positions


def keypoint_array(spec: SyntheticSpec, positions: np.ndarray, label: int, index: int) -> np.ndarray:
    """归一化坐标 → 像素坐标，加上置信度"""
    width, height = spec.frame_size
    T, N, _ = positions.shape
    data = np.empty((T, N, 3))
    data[..., 0] = (positions[..., 0] + 1.0) * width / 2.0
    data[..., 1] = (positions[..., 1] + 1.0) * height / 2.0
    if spec.noise > 0:
        rng = np.random.default_rng([spec.seed, label, index, 1])
        data[..., 2] = rng.uniform(0.8, 1.0, size=(T, N))
    else:
        data[..., 2] = 1.0
    return data


def feature_clip(spec: SyntheticSpec, positions: np.ndarray) -> np.ndarray:
    """关键点轨迹均匀采样到 feature_frames 帧，画成热图后池化到 feature_size"""
    indices = (np.arange(spec.feature_frames) * spec.frames) // spec.feature_frames
    points = positions[indices]
    points = np.concatenate([points, extra_keypoints(spec.graph, points)], axis=1)
    raw = heatmaps(points, spec.feature_size * spec.feature_scale)
    return pool_features(raw, spec.feature_size).data


def split_of(spec: SyntheticSpec, index: int) -> str:
    n_val = int(round(spec.samples_per_class * spec.val_fraction))
    n_test = int(round(spec.samples_per_class * spec.test_fraction))
    if index < n_val:
        return "val"
    if index < n_val + n_test:
        return "test"
    return "train"


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Dict[str, Path]:
    """
    写出合成数据集

    out_dir/manifest.csv 与 keypoints/*.skel；features 为真时还有
    features_manifest.csv 与 features/*.feat。相同种子得到逐字节相同的文件。
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keypoint_rows, feature_rows = [], []
    for label in range(spec.num_classes):
        for index in range(spec.samples_per_class):
            sample_id = f"c{label:03d}_{index:04d}"
            split = split_of(spec, index)
            positions = sample_positions(spec, label, index)
            rel = f"keypoints/{sample_id}.skel"
            write_keypoints(out_dir / rel, keypoint_array(spec, positions, label, index))
            keypoint_rows.append(ManifestRow(sample_id, rel, label, split))
            if spec.features:
                rel = f"features/{sample_id}.feat"
                write_feature_clip(out_dir / rel, feature_clip(spec, positions))
                feature_rows.append(ManifestRow(sample_id, rel, label, split))

    outputs = {"manifest": out_dir / "manifest.csv"}
    write_manifest(outputs["manifest"], keypoint_rows)
    if spec.features:
        outputs["features_manifest"] = out_dir / "features_manifest.csv"
        write_manifest(outputs["features_manifest"], feature_rows)
    logger.info(f"生成合成数据集: {spec.num_classes} 类 × {spec.samples_per_class} 个样本 -> {out_dir}")
    return outputs
