"""
文件格式读写

- 关键点文件 SKEL：小端，magic、u32 版本、u32 T、u32 N、u32 C=3，随后 T·N·C 个 float32
- 特征片段 FEAT：magic、u32 版本、u32 帧数、u32 关键点数、u32 h、u32 w，随后 float32 数据
- 清单 CSV：sample_id,relative_path,label,split
- 分数 CSV：sample_id,c0,...,c{n_c-1}
"""

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from logic.errors import DataError
from version import KEYPOINT_FORMAT_VERSION, FEATURE_FORMAT_VERSION

logger = logging.getLogger('file_formats')

SKEL_MAGIC = b"SKEL"
FEAT_MAGIC = b"FEAT"
MANIFEST_FIELDS = ("sample_id", "relative_path", "label", "split")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    relative_path: str
    label: Optional[int]
    split: str


def _read_header(path: Path, magic: bytes, count: int) -> Tuple[Tuple[int, ...], bytes]:
    if not path.exists():
        raise DataError(f"文件不存在: {path}", "DATA_FILE_MISSING")
    payload = path.read_bytes()
    header_size = 4 + 4 * count
    if len(payload) < header_size or payload[:4] != magic:
        raise DataError(f"{path} 不是 {magic.decode()} 文件", "DATA_BAD_MAGIC")
    values = struct.unpack("<" + "I" * count, payload[4:header_size])
    return values, payload[header_size:]


def write_keypoints(path, data: np.ndarray):
    """写入 T × N × 3 关键点数组"""
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 3 or data.shape[2] != 3:
        raise DataError(f"关键点数组形状必须是 T×N×3，实际 {data.shape}", "DATA_SHAPE")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    T, N, C = data.shape
    with open(path, "wb") as f:
        f.write(SKEL_MAGIC)
        f.write(struct.pack("<IIII", KEYPOINT_FORMAT_VERSION, T, N, C))
        f.write(np.ascontiguousarray(data).tobytes())


def read_keypoints(path) -> np.ndarray:
    """读取关键点文件，返回 float64 的 T × N × 3 数组"""
    path = Path(path)
    (version, T, N, C), body = _read_header(path, SKEL_MAGIC, 4)
    if version != KEYPOINT_FORMAT_VERSION:
        raise DataError(f"{path} 版本 {version} 不受支持", "DATA_VERSION")
    if C != 3 or T < 1 or N < 1:
        raise DataError(f"{path} 头部非法: T={T}, N={N}, C={C}", "DATA_SHAPE")
    expected = T * N * C * 4
    if len(body) != expected:
        raise DataError(f"{path} 数据长度 {len(body)} 与头部不符（应为 {expected}）", "DATA_TRUNCATED")
    return np.frombuffer(body, dtype="<f4").reshape(T, N, C).astype(np.float64)


def write_feature_clip(path, data: np.ndarray):
    """写入 帧 × 关键点 × h × w 特征片段"""
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 4:
        raise DataError(f"特征片段必须是4维数组，实际 {data.shape}", "DATA_SHAPE")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames, keypoints, h, w = data.shape
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<IIIII", FEATURE_FORMAT_VERSION, frames, keypoints, h, w))
        f.write(np.ascontiguousarray(data).tobytes())


def read_feature_clip(path) -> np.ndarray:
    path = Path(path)
    (version, frames, keypoints, h, w), body = _read_header(path, FEAT_MAGIC, 5)
    if version != FEATURE_FORMAT_VERSION:
        raise DataError(f"{path} 版本 {version} 不受支持", "DATA_VERSION")
    expected = frames * keypoints * h * w * 4
    if len(body) != expected:
        raise DataError(f"{path} 数据长度 {len(body)} 与头部不符（应为 {expected}）", "DATA_TRUNCATED")
    return np.frombuffer(body, dtype="<f4").reshape(frames, keypoints, h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# 清单
# ---------------------------------------------------------------------------

def read_manifest(path, split: Optional[str] = None) -> List[ManifestRow]:
    """读取清单，可只保留某个划分"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"清单不存在: {path}", "DATA_FILE_MISSING")
    rows = []
    seen = set()
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames[:4]) != MANIFEST_FIELDS:
            raise DataError(f"{path} 表头必须是 {','.join(MANIFEST_FIELDS)}", "DATA_MANIFEST")
        for line_no, record in enumerate(reader, start=2):
            sample_id = record["sample_id"].strip()
            if sample_id in seen:
                raise DataError(f"{path}:{line_no} 样本 {sample_id} 重复", "DATA_MANIFEST")
            seen.add(sample_id)
            label_text = (record["label"] or "").strip()
            try:
                label = int(label_text) if label_text else None
            except ValueError:
                raise DataError(f"{path}:{line_no} 标签 '{label_text}' 不是整数", "DATA_MANIFEST")
            row = ManifestRow(sample_id, record["relative_path"].strip(), label, record["split"].strip())
            if split is None or row.split == split:
                rows.append(row)
    return rows


def write_manifest(path, rows: Sequence[ManifestRow]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for row in rows:
            writer.writerow([row.sample_id, row.relative_path, "" if row.label is None else row.label, row.split])


# ---------------------------------------------------------------------------
# 分数文件
# ---------------------------------------------------------------------------

def write_scores(path, sample_ids: Sequence[str], scores: np.ndarray):
    """写入分数 CSV，数值用 repr 保存以便精确往返"""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != len(sample_ids):
        raise DataError(f"分数矩阵形状 {scores.shape} 与样本数 {len(sample_ids)} 不符", "DATA_SHAPE")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["sample_id"] + [f"c{k}" for k in range(scores.shape[1])])
        for sample_id, row in zip(sample_ids, scores):
            writer.writerow([sample_id] + [repr(float(v)) for v in row])


def read_scores(path) -> Tuple[List[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"分数文件不存在: {path}", "DATA_FILE_MISSING")
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "sample_id":
            raise DataError(f"{path} 表头必须以 sample_id 开头", "DATA_SCORES")
        num_classes = len(header) - 1
        ids, values = [], []
        for line_no, record in enumerate(reader, start=2):
            if len(record) != num_classes + 1:
                raise DataError(f"{path}:{line_no} 列数与表头不符", "DATA_SCORES")
            ids.append(record[0])
            values.append([float(v) for v in record[1:]])
    scores = np.array(values, dtype=np.float64).reshape(len(ids), num_classes)
    if not np.isfinite(scores).all():
        raise DataError(f"{path} 含有非有限分数", "DATA_SCORES")
    return ids, scores


def read_labels(path) -> Dict[str, int]:
    """读取 sample_id,label 标签文件（也接受清单格式）"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"标签文件不存在: {path}", "DATA_FILE_MISSING")
    labels = {}
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "sample_id" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise DataError(f"{path} 需要 sample_id 与 label 两列", "DATA_LABELS")
        for record in reader:
            if record["label"] not in (None, ""):
                labels[record["sample_id"]] = int(record["label"])
    return labels
