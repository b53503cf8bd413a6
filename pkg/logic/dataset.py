"""
数据集

清单中的每一行对应一个关键点文件（SL-GCN）或特征片段文件（SSTCN）。
训练时每个样本的增强由 (种子, epoch, 样本ID) 决定，与加载顺序和 worker 数无关。
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from logic.errors import DataError
from logic.file_formats import ManifestRow, read_feature_clip, read_keypoints, read_manifest, write_keypoints, \
    write_manifest
from logic.graph import NodeSelection, SkeletonGraph, default_full_graph, default_selection, reduce_graph
from logic.sstcn import SSTCNConfig, pool_features, KeypointFeatureClip
from logic.streams import AugmentationParams, KeypointSequence, augment, build_stream, normalize_coords, \
    sample_frames, sample_rng

logger = logging.getLogger('dataset')


def missing_files(rows: Sequence[ManifestRow], data_dir: Path) -> List[ManifestRow]:
    """逐个样本检查文件是否存在，缺失的每个都记录日志"""
    missing = []
    for row in rows:
        if not (Path(data_dir) / row.relative_path).exists():
            logger.error(f"样本 {row.sample_id} 的文件不存在: {row.relative_path}")
            missing.append(row)
    return missing


def require_files(rows: Sequence[ManifestRow], data_dir: Path):
    missing = missing_files(rows, data_dir)
    if missing:
        ids = ", ".join(r.sample_id for r in missing[:5])
        raise DataError(f"{len(missing)} 个样本缺少文件: {ids}", "DATA_FILE_MISSING")


class SkeletonDataset(Dataset):
    """返回 (3 × T × N 的输入流张量, 标签, 行号)"""

    def __init__(self, rows: Sequence[ManifestRow], data_dir, graph: SkeletonGraph, stream: str,
                 frame_size: Tuple[int, int], augmentation: AugmentationParams, train: bool = False,
                 augment_enabled: bool = True):
        self.rows = list(rows)
        self.data_dir = Path(data_dir)
        self.graph = graph
        self.stream = stream
        self.frame_size = tuple(frame_size)
        self.augmentation = augmentation
        self.train = train
        self.augment_enabled = augment_enabled
        self.epoch = 0

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self):
        return len(self.rows)

    def sequence(self, index: int) -> KeypointSequence:
        row = self.rows[index]
        data = read_keypoints(self.data_dir / row.relative_path)
        seq = KeypointSequence.from_array(data, self.frame_size, row.sample_id, row.label)
        if seq.num_nodes != self.graph.num_nodes:
            raise DataError(
                f"样本 {row.sample_id} 有 {seq.num_nodes} 个节点，图有 {self.graph.num_nodes} 个",
                "DATA_NODE_MISMATCH")
        seq = normalize_coords(seq)
        params = self.augmentation
        if self.train and self.augment_enabled:
            rng = sample_rng(params.rng_seed, row.sample_id, self.epoch)
            return augment(seq, params, self.graph, rng)
        # 评估与不做增强的训练都用均匀采样
        return sample_frames(seq, params.sample_length, "uniform")

    def __getitem__(self, index: int):
        seq = self.sequence(index)
        stream = build_stream(seq, self.stream, self.graph)
        tensor = torch.tensor(stream.data, dtype=torch.float32).permute(2, 0, 1).contiguous()
        label = -1 if self.rows[index].label is None else self.rows[index].label
        return tensor, label, index


class FeatureDataset(Dataset):
    """返回 (帧 × 关键点 × S × S 的特征张量, 标签, 行号)；比 S 大的特征图先最大池化"""

    def __init__(self, rows: Sequence[ManifestRow], data_dir, config: SSTCNConfig):
        self.rows = list(rows)
        self.data_dir = Path(data_dir)
        self.config = config

    def set_epoch(self, epoch: int):
        pass

    def __len__(self):
        return len(self.rows)

    def clip(self, index: int) -> KeypointFeatureClip:
        row = self.rows[index]
        raw = read_feature_clip(self.data_dir / row.relative_path)
        cfg = self.config
        if raw.shape[2] != cfg.feature_size:
            clip = pool_features(raw, cfg.feature_size)
        else:
            clip = KeypointFeatureClip(np.asarray(raw, dtype=np.float64))
        return KeypointFeatureClip(clip.data, row.label).validate(cfg.frames, cfg.keypoints)

    def __getitem__(self, index: int):
        clip = self.clip(index)
        label = -1 if clip.label is None else clip.label
        return torch.tensor(clip.data, dtype=torch.float32), label, index


def make_loader(dataset: Dataset, batch_size: int, shuffle: bool, seed: int, workers: int = 0) -> DataLoader:
    """打乱顺序由固定种子的 generator 决定"""
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, num_workers=workers,
                      generator=generator, drop_last=False)


def prepare_dataset(manifest, out_dir, graph: Optional[SkeletonGraph] = None,
                    selection: Optional[NodeSelection] = None) -> List[ManifestRow]:
    """
    校验清单并写出裁剪图上的关键点文件

    全身关键点（与 graph 节点数相同）按 selection 只保留选中的节点；
    已经是裁剪后节点数的文件原样复制。输出目录中写一份新的清单。
    """
    manifest = Path(manifest)
    out_dir = Path(out_dir)
    graph = graph or default_full_graph()
    selection = selection or default_selection()
    reduced = reduce_graph(graph, selection)
    kept = np.array(selection.kept_indices)

    rows = read_manifest(manifest)
    if not rows:
        raise DataError(f"{manifest} 没有任何样本", "DATA_EMPTY")
    require_files(rows, manifest.parent)

    out_rows = []
    for row in rows:
        data = read_keypoints(manifest.parent / row.relative_path)
        KeypointSequence.from_array(data, sample_id=row.sample_id)
        if data.shape[1] == graph.num_nodes:
            data = data[:, kept]
        elif data.shape[1] != reduced.num_nodes:
            raise DataError(
                f"样本 {row.sample_id} 有 {data.shape[1]} 个节点，应为 {graph.num_nodes} 或 {reduced.num_nodes}",
                "DATA_NODE_MISMATCH")
        write_keypoints(out_dir / row.relative_path, data)
        out_rows.append(row)
    write_manifest(out_dir / "manifest.csv", out_rows)
    logger.info(f"准备数据集: {len(out_rows)} 个样本, {graph.num_nodes} -> {reduced.num_nodes} 个节点")
    return out_rows
