"""
实验配置

配置文件为逐行的 `key = value`，`#` 开头为注释，用 python-dotenv 解析。
相对路径都相对于 root 键（默认是配置文件所在目录）。
"""

import hashlib
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import dotenv_values

from logic.constants import (
    STREAMS, FRAME_WIDTH, FRAME_HEIGHT, SAMPLE_LENGTH, LABEL_SMOOTHING, MOMENTUM,
    MIRROR_PROB, ROTATION_RANGE, SCALE_RANGE, JITTER_STD, SHIFT_RANGE,
    SLGCN_CHANNELS, SLGCN_STRIDES, SLGCN_GROUPS, TEMPORAL_KERNEL,
    DROPGRAPH_KEEP_PROB, DROPGRAPH_BLOCK_HOPS, DROPGRAPH_FIRST_BLOCK,
    SSTCN_FRAMES, SSTCN_KEYPOINTS, SSTCN_FEATURE_SIZE, SSTCN_DROPOUT,
    INITIAL_LR, INITIAL_WEIGHT_DECAY, LR_MILESTONES, TOTAL_EPOCHS, BATCH_SIZE, FINETUNE_EPOCH_CAP, DEFAULT_SEED,
)
from logic.errors import ConfigError, SamSlrError
from logic.graph import SkeletonGraph, default_slr_graph, load_layout, load_selection, reduce_graph
from logic.schedule import TrainSchedule, parse_milestones
from logic.slgcn import SLGCNConfig, channel_plan
from logic.sstcn import SSTCNConfig
from logic.streams import AugmentationParams

logger = logging.getLogger('config')

NETWORKS = ("slgcn", "sstcn")
OPTIMIZERS = ("sgd", "adam")
PATH_KEYS = ("manifest", "output_dir", "graph_layout", "graph_selection")

EXPERIMENT_KEYS = {
    "root", "manifest", "output_dir", "net", "stream", "num_classes", "seed",
    "epochs", "batch_size", "lr", "weight_decay", "milestones", "optimizer", "momentum", "patience",
    "label_smoothing", "finetune_cap", "workers",
    "sample_length", "frame_width", "frame_height", "augment", "temporal_sampling",
    "mirror_prob", "rotation_deg", "scale_min", "scale_max", "jitter_std", "shift_range",
    "graph_layout", "graph_selection",
    "channels", "strides", "groups", "temporal_kernel", "attention", "keep_prob", "block_hops",
    "drop_first_block", "partition", "activation", "zero_init_classifier",
    "frames", "keypoints", "feature_size", "dropout", "temporal_width", "spatial_expansion",
    "classifier_hidden",
}


# ---------------------------------------------------------------------------
# key = value 解析
# ---------------------------------------------------------------------------

def read_key_values(path=None, text: Optional[str] = None) -> Dict[str, str]:
    """解析 key = value 文件或文本，保持键的顺序"""
    if text is None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"配置文件不存在: {path}", "CONFIG_MISSING")
        text = path.read_text(encoding='utf-8')
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)
    result = {}
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"配置项 {key} 缺少 '= 值'", "CONFIG_PARSE")
        result[key.strip().lower()] = value.strip()
    return result


def as_int(values: Dict[str, str], key: str, default: int) -> int:
    if key not in values:
        return default
    try:
        return int(values[key])
    except ValueError:
        raise ConfigError(f"{key} 必须是整数: '{values[key]}'", "CONFIG_VALUE")


def as_float(values: Dict[str, str], key: str, default: float) -> float:
    if key not in values:
        return default
    try:
        return float(values[key])
    except ValueError:
        raise ConfigError(f"{key} 必须是数值: '{values[key]}'", "CONFIG_VALUE")


def as_bool(values: Dict[str, str], key: str, default: bool) -> bool:
    if key not in values:
        return default
    text = values[key].lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} 必须是 true/false: '{values[key]}'", "CONFIG_VALUE")


def as_int_list(values: Dict[str, str], key: str, default) -> Tuple[int, ...]:
    if key not in values:
        return tuple(default)
    try:
        return tuple(int(v) for v in values[key].split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key} 必须是逗号分隔的整数: '{values[key]}'", "CONFIG_VALUE")


def as_float_list(text: str, key: str = "grid") -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key} 必须是逗号分隔的数值: '{text}'", "CONFIG_VALUE")


def resolve_root(values: Dict[str, str], base_dir: Path) -> Path:
    root = Path(values.get("root", "") or ".")
    if not root.is_absolute():
        root = base_dir / root
    return root.resolve()


# ---------------------------------------------------------------------------
# 实验配置
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    text: str
    root: Path
    net: str
    stream: str
    manifest: Path
    output_dir: Path
    num_classes: int
    seed: int
    schedule: TrainSchedule
    optimizer: str
    momentum: float
    patience: Optional[int]
    label_smoothing: float
    augment: bool
    augmentation: AugmentationParams
    frame_size: Tuple[int, int]
    graph_layout: Optional[Path]
    graph_selection: Optional[Path]
    slgcn: Optional[SLGCNConfig]
    sstcn: Optional[SSTCNConfig]
    finetune_cap: int
    workers: int

    @property
    def digest(self) -> str:
        return config_digest(self.text)

    @property
    def data_dir(self) -> Path:
        return self.manifest.parent

    def graph(self) -> SkeletonGraph:
        """SL-GCN 使用的骨架图：默认27节点图，或配置中的布局（可再裁剪）"""
        if self.graph_layout is None:
            return default_slr_graph()
        graph = load_layout(self.graph_layout)
        if self.graph_selection is not None:
            graph = reduce_graph(graph, load_selection(self.graph_selection))
        return graph


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def canonical_text(values: Dict[str, str], root: Path) -> str:
    """排序后的 key = value 文本，root 与路径都写成绝对路径"""
    lines = [f"root = {root}"]
    for key in sorted(values):
        if key == "root":
            continue
        value = values[key]
        if key in PATH_KEYS and value:
            p = Path(value)
            value = str((p if p.is_absolute() else root / p).resolve())
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _slgcn_config(values: Dict[str, str], num_classes: int, seed: int) -> SLGCNConfig:
    channels = as_int_list(values, "channels", SLGCN_CHANNELS)
    strides = as_int_list(values, "strides", SLGCN_STRIDES if "channels" not in values else [1] * len(channels))
    return SLGCNConfig(
        num_classes=num_classes,
        blocks=channel_plan(channels, strides),
        groups=as_int(values, "groups", SLGCN_GROUPS),
        temporal_kernel=as_int(values, "temporal_kernel", TEMPORAL_KERNEL),
        attention=as_bool(values, "attention", True),
        keep_prob=as_float(values, "keep_prob", DROPGRAPH_KEEP_PROB),
        block_hops=as_int(values, "block_hops", DROPGRAPH_BLOCK_HOPS),
        drop_first_block=as_int(values, "drop_first_block", DROPGRAPH_FIRST_BLOCK),
        partition_strategy=values.get("partition", "spatial"),
        activation=values.get("activation", "relu"),
        zero_init_classifier=as_bool(values, "zero_init_classifier", False),
        seed=seed,
    )


def _sstcn_config(values: Dict[str, str], num_classes: int) -> SSTCNConfig:
    return SSTCNConfig(
        num_classes=num_classes,
        feature_size=as_int(values, "feature_size", SSTCN_FEATURE_SIZE),
        frames=as_int(values, "frames", SSTCN_FRAMES),
        keypoints=as_int(values, "keypoints", SSTCN_KEYPOINTS),
        dropout=as_float(values, "dropout", SSTCN_DROPOUT),
        temporal_width=as_int(values, "temporal_width", 128),
        spatial_expansion=as_int(values, "spatial_expansion", 2),
        classifier_hidden=as_int(values, "classifier_hidden", 256),
    )


def config_from_values(values: Dict[str, str], base_dir: Path,
                       overrides: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    values = dict(values)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = str(value)
    unknown = sorted(set(values) - EXPERIMENT_KEYS)
    if unknown:
        raise ConfigError(f"未知的配置项: {', '.join(unknown)}", "CONFIG_UNKNOWN_KEY")

    root = resolve_root(values, Path(base_dir))
    net = values.get("net", "slgcn")
    if net not in NETWORKS:
        raise ConfigError(f"未知的网络: {net}", "CONFIG_NET")
    stream = values.get("stream", "joint")
    if stream not in STREAMS:
        raise ConfigError(f"未知的输入流: {stream}", "CONFIG_STREAM")
    if "manifest" not in values:
        raise ConfigError("缺少 manifest 配置项", "CONFIG_MISSING_KEY")
    if "num_classes" not in values:
        raise ConfigError("缺少 num_classes 配置项", "CONFIG_MISSING_KEY")

    def path_of(key: str, default: Optional[str] = None) -> Optional[Path]:
        value = values.get(key, default)
        if not value:
            return None
        p = Path(value)
        return (p if p.is_absolute() else root / p).resolve()

    seed = as_int(values, "seed", DEFAULT_SEED)
    num_classes = as_int(values, "num_classes", 0)
    optimizer = values.get("optimizer", "sgd")
    if optimizer not in OPTIMIZERS:
        raise ConfigError(f"未知的优化器: {optimizer}", "CONFIG_OPTIMIZER")
    patience = as_int(values, "patience", 0) or None

    try:
        schedule = TrainSchedule(
            initial_lr=as_float(values, "lr", INITIAL_LR),
            initial_weight_decay=as_float(values, "weight_decay", INITIAL_WEIGHT_DECAY),
            milestones=parse_milestones(values["milestones"]) if "milestones" in values
            else LR_MILESTONES,
            total_epochs=as_int(values, "epochs", TOTAL_EPOCHS),
            batch_size=as_int(values, "batch_size", BATCH_SIZE),
            seed=seed,
        )
        augmentation = AugmentationParams(
            mirror_prob=as_float(values, "mirror_prob", MIRROR_PROB),
            rotation_range=math.radians(as_float(values, "rotation_deg", math.degrees(ROTATION_RANGE))),
            scale_range=(as_float(values, "scale_min", SCALE_RANGE[0]), as_float(values, "scale_max", SCALE_RANGE[1])),
            jitter_std=as_float(values, "jitter_std", JITTER_STD),
            shift_range=as_float(values, "shift_range", SHIFT_RANGE),
            temporal_sampling=values.get("temporal_sampling", "random_window"),
            rng_seed=seed,
            sample_length=as_int(values, "sample_length", SAMPLE_LENGTH),
        )
        slgcn = _slgcn_config(values, num_classes, seed) if net == "slgcn" else None
        sstcn = _sstcn_config(values, num_classes) if net == "sstcn" else None
    except ConfigError:
        raise
    except SamSlrError as e:
        raise ConfigError(str(e), e.tag)

    label_smoothing = as_float(values, "label_smoothing", LABEL_SMOOTHING)
    if not 0.0 <= label_smoothing < 1.0:
        raise ConfigError(f"label_smoothing 必须在 [0, 1): {label_smoothing}", "CONFIG_VALUE")

    config = ExperimentConfig(
        text=canonical_text(values, root),
        root=root,
        net=net,
        stream=stream,
        manifest=path_of("manifest"),
        output_dir=path_of("output_dir", f"runs/{net}_{stream}"),
        num_classes=num_classes,
        seed=seed,
        schedule=schedule,
        optimizer=optimizer,
        momentum=as_float(values, "momentum", MOMENTUM),
        patience=patience,
        label_smoothing=label_smoothing,
        augment=as_bool(values, "augment", True),
        augmentation=augmentation,
        frame_size=(as_int(values, "frame_width", FRAME_WIDTH), as_int(values, "frame_height", FRAME_HEIGHT)),
        graph_layout=path_of("graph_layout"),
        graph_selection=path_of("graph_selection"),
        slgcn=slgcn,
        sstcn=sstcn,
        finetune_cap=as_int(values, "finetune_cap", FINETUNE_EPOCH_CAP),
        workers=as_int(values, "workers", 0),
    )
    logger.debug(f"加载配置: net={net}, stream={stream}, 摘要={config.digest[:12]}")
    return config


def load_config(path, overrides: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    """读取实验配置文件；overrides 中非 None 的值覆盖文件中的同名项"""
    path = Path(path)
    return config_from_values(read_key_values(path), path.resolve().parent, overrides)


def config_from_text(text: str, overrides: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    """由检查点中保存的规范化文本重建配置（root 已是绝对路径）"""
    return config_from_values(read_key_values(text=text), Path.cwd(), overrides)


# ---------------------------------------------------------------------------
# 融合配置
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionEntry:
    modality: str
    scores: Path
    alpha: float


def load_fusion_config(path) -> Tuple[List[FusionEntry], Optional[Path]]:
    """
    融合配置：每行 `模态 = 分数文件, α`；可选 `labels = 标签文件` 用于报告准确率

    返回 (按文件顺序的条目, 标签文件路径)。
    """
    path = Path(path)
    values = read_key_values(path)
    root = resolve_root(values, path.resolve().parent)
    entries = []
    labels = None
    for key, value in values.items():
        if key == "root":
            continue
        if key == "labels":
            labels = (root / value).resolve() if not Path(value).is_absolute() else Path(value)
            continue
        parts = [p.strip() for p in value.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"融合配置 {key} 应为 '分数文件, 权重'，实际 '{value}'", "CONFIG_FUSION")
        try:
            alpha = float(parts[1])
        except ValueError:
            raise ConfigError(f"融合配置 {key} 的权重不是数值: '{parts[1]}'", "CONFIG_FUSION")
        score_path = Path(parts[0])
        if not score_path.is_absolute():
            score_path = (root / score_path).resolve()
        entries.append(FusionEntry(key, score_path, alpha))
    if not entries:
        raise ConfigError(f"{path} 没有任何模态", "CONFIG_FUSION")
    return entries, labels


def write_fusion_config(path, entries: List[FusionEntry], labels: Optional[Path] = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {len(entries)} 个模态的融合权重"]
    for entry in entries:
        lines.append(f"{entry.modality} = {entry.scores}, {entry.alpha!r}")
    if labels is not None:
        lines.append(f"labels = {labels}")
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
