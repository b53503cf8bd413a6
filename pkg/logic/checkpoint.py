"""
检查点文件

格式（小端）：
  magic "SLRC" | u32 版本 | 32字节配置 sha256 | u64 步数
  u32 元数据长度 | 元数据 JSON（配置文本、最佳验证精度、stop_loss 等）
  u32 张量个数 | 每个张量：u16 名字长度、名字、u8 维数、u32×维数 形状、float32 数据
载入时名字、形状或配置摘要不符都报错，不做静默转换。
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch
import torch.nn as nn

from logic.errors import CheckpointError
from version import CHECKPOINT_FORMAT_VERSION

logger = logging.getLogger('checkpoint')

MAGIC = b"SLRC"


@dataclass
class Checkpoint:
    digest: str
    step: int
    meta: Dict[str, Any]
    tensors: Dict[str, np.ndarray] = field(repr=False)

    @property
    def config_text(self) -> str:
        return self.meta.get("config_text", "")


def save_checkpoint(path, model: nn.Module, config_text: str, step: int,
                    meta: Optional[Dict[str, Any]] = None) -> Path:
    """保存模型的全部参数与缓冲区"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256(config_text.encode('utf-8')).digest()
    meta = dict(meta or {})
    meta["config_text"] = config_text
    meta_bytes = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode('utf-8')

    state = model.state_dict()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_FORMAT_VERSION))
        f.write(digest)
        f.write(struct.pack("<Q", int(step)))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            name_bytes = name.encode('utf-8')
            array = tensor.detach().cpu().numpy().astype("<f4")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<B", array.ndim))
            f.write(struct.pack("<" + "I" * array.ndim, *array.shape))
            f.write(np.ascontiguousarray(array).tobytes())
    tmp.replace(path)
    logger.debug(f"保存检查点 {path}: {len(state)} 个张量, step {step}")
    return path


class _Reader:
    def __init__(self, payload: bytes, path: Path):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointError(f"{self.path} 文件被截断", "CHECKPOINT_TRUNCATED")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"检查点不存在: {path}", "CHECKPOINT_MISSING")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} 不是检查点文件", "CHECKPOINT_BAD_MAGIC")
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path} 检查点版本 {version} 不受支持", "CHECKPOINT_VERSION")
    digest = reader.take(32).hex()
    (step,) = reader.unpack("<Q")
    (meta_len,) = reader.unpack("<I")
    try:
        meta = json.loads(reader.take(meta_len).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} 元数据损坏: {e}", "CHECKPOINT_META")
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode('utf-8')
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack("<" + "I" * ndim) if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(reader.take(size * 4), dtype="<f4").reshape(shape)
    if reader.offset != len(reader.payload):
        raise CheckpointError(f"{path} 末尾有多余数据", "CHECKPOINT_TRAILING")
    return Checkpoint(digest, step, meta, tensors)


def load_checkpoint(path, model: Optional[nn.Module] = None,
                    expected_config_text: Optional[str] = None) -> Checkpoint:
    """
    读取检查点，可选地把参数载入 model

    expected_config_text 给出时校验配置摘要；model 给出时逐个校验名字和形状，
    张量按模型中对应张量的 dtype 转回（例如 BN 的计数器是整数）。
    """
    ckpt = read_checkpoint(path)
    if expected_config_text is not None:
        expected = hashlib.sha256(expected_config_text.encode('utf-8')).hexdigest()
        if expected != ckpt.digest:
            raise CheckpointError(f"{path} 的配置摘要与当前配置不符", "CHECKPOINT_CONFIG_MISMATCH")
    if model is not None:
        state = model.state_dict()
        missing = sorted(set(state) - set(ckpt.tensors))
        unexpected = sorted(set(ckpt.tensors) - set(state))
        if missing or unexpected:
            raise CheckpointError(
                f"{path} 与模型结构不符，缺少 {missing[:3]}，多出 {unexpected[:3]}", "CHECKPOINT_SHAPE_MISMATCH")
        restored = {}
        for name, target in state.items():
            array = ckpt.tensors[name]
            if tuple(array.shape) != tuple(target.shape):
                raise CheckpointError(
                    f"{path} 中 {name} 形状 {tuple(array.shape)} 与模型 {tuple(target.shape)} 不符",
                    "CHECKPOINT_SHAPE_MISMATCH")
            restored[name] = torch.tensor(np.array(array), dtype=torch.float32).to(target.dtype)
        model.load_state_dict(restored)
    return ckpt
