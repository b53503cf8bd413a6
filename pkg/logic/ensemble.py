"""
多模态晚期融合

对各模态 softmax 之前的分数加权求和后取 argmax；权重在验证集上网格搜索。
"""

import itertools
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from logic.constants import (
    RGB_TRACK_WEIGHTS, RGBD_TRACK_WEIGHTS, STREAMS,
    TUNE_GRID, TUNE_MAX_COMBINATIONS, TUNE_BEAM_WIDTH,
)
from logic.errors import EnsembleError
from logic.unified_logger import get_unified_logger

logger = get_unified_logger('ensemble')


@dataclass(frozen=True)
class ScoreVector:
    sample_id: str
    modality: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise EnsembleError(f"{self.sample_id}/{self.modality} 分数必须是非空向量", "ENSEMBLE_SHAPE")
        if not np.isfinite(values).all():
            raise EnsembleError(f"{self.sample_id}/{self.modality} 分数含有非有限值", "ENSEMBLE_NON_FINITE")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class EnsembleWeights:
    """有序的 (模态, α) 对"""
    pairs: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        pairs = tuple((str(m), float(a)) for m, a in self.pairs)
        if not pairs:
            raise EnsembleError("融合权重为空", "ENSEMBLE_WEIGHTS")
        names = [m for m, _ in pairs]
        if len(set(names)) != len(names):
            raise EnsembleError(f"模态重复: {names}", "ENSEMBLE_WEIGHTS")
        if any(a < 0 or not np.isfinite(a) for _, a in pairs):
            raise EnsembleError(f"权重必须非负: {pairs}", "ENSEMBLE_WEIGHTS")
        if not any(a > 0 for _, a in pairs):
            raise EnsembleError("至少需要一个正权重", "ENSEMBLE_WEIGHTS")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def of(cls, modalities: Sequence[str], alphas: Sequence[float]) -> "EnsembleWeights":
        if len(modalities) != len(alphas):
            raise EnsembleError("模态与权重数量不同", "ENSEMBLE_WEIGHTS")
        return cls(tuple(zip(modalities, alphas)))

    @property
    def modalities(self) -> Tuple[str, ...]:
        return tuple(m for m, _ in self.pairs)

    @property
    def alphas(self) -> Tuple[float, ...]:
        return tuple(a for _, a in self.pairs)

    def scaled(self, factor: float) -> "EnsembleWeights":
        return EnsembleWeights(tuple((m, a * factor) for m, a in self.pairs))

    def as_dict(self) -> Dict[str, float]:
        return dict(self.pairs)


def rgb_track_weights() -> EnsembleWeights:
    return EnsembleWeights(RGB_TRACK_WEIGHTS)


def rgbd_track_weights() -> EnsembleWeights:
    return EnsembleWeights(RGBD_TRACK_WEIGHTS)


def default_stream_weights() -> EnsembleWeights:
    return EnsembleWeights.of(STREAMS, [1.0] * len(STREAMS))


def fuse(scores: Mapping[str, np.ndarray], weights: EnsembleWeights) -> np.ndarray:
    """
    按 weights 的顺序逐元素加权求和

    scores 的值可以是单个样本的向量，也可以是 样本数 × n_c 的矩阵。
    权重非零的模态缺失时报错；多余的模态忽略并给出警告。
    """
    extra = [m for m in scores if m not in weights.modalities]
    if extra:
        logger.warning(f"融合时忽略未配置权重的模态: {extra}")
    fused = None
    shape = None
    for modality, alpha in weights.pairs:
        if modality not in scores:
            if alpha != 0:
                raise EnsembleError(f"缺少模态 {modality} 的分数（权重 {alpha}）", "ENSEMBLE_MISSING_MODALITY")
            continue
        values = np.asarray(getattr(scores[modality], "values", scores[modality]), dtype=np.float64)
        if shape is None:
            shape = values.shape
        elif values.shape != shape:
            raise EnsembleError(f"模态 {modality} 分数形状 {values.shape} 与 {shape} 不一致", "ENSEMBLE_SHAPE")
        if not np.isfinite(values).all():
            raise EnsembleError(f"模态 {modality} 分数含有非有限值", "ENSEMBLE_NON_FINITE")
        term = alpha * values
        fused = term if fused is None else fused + term
    if fused is None:
        raise EnsembleError("没有可融合的分数", "ENSEMBLE_EMPTY")
    return fused


def fuse_streams(stream_scores: Mapping[str, np.ndarray],
                 stream_weights: Optional[EnsembleWeights] = None) -> np.ndarray:
    """SL-GCN 四个输入流的分数融合，默认等权"""
    return fuse(stream_scores, stream_weights or default_stream_weights())


def predict(fused) -> np.ndarray:
    """argmax，并列时取最小下标"""
    fused = np.asarray(getattr(fused, "values", fused), dtype=np.float64)
    if fused.size == 0:
        raise EnsembleError("分数为空", "ENSEMBLE_EMPTY")
    return np.argmax(fused, axis=-1)


def topk_correct(scores: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """每个样本的真实类别是否在前 k 名（并列时下标小的优先）"""
    scores = np.asarray(scores, dtype=np.float64)
    k = min(k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return (order == np.asarray(labels)[:, None]).any(axis=1)


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(predict(scores) == labels))


def _stack_modalities(val_scores: Mapping[str, np.ndarray], labels) -> Tuple[List[str], np.ndarray, np.ndarray]:
    modalities = list(val_scores)
    if not modalities:
        raise EnsembleError("没有候选模态", "ENSEMBLE_EMPTY")
    labels = np.asarray(labels)
    stack = []
    for m in modalities:
        values = np.asarray(val_scores[m], dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != labels.shape[0]:
            raise EnsembleError(f"模态 {m} 的验证分数形状 {values.shape} 与 {labels.shape[0]} 个标签不符",
                                "ENSEMBLE_SHAPE")
        stack.append(values)
    shapes = {s.shape for s in stack}
    if len(shapes) != 1:
        raise EnsembleError(f"各模态分数形状不一致: {shapes}", "ENSEMBLE_SHAPE")
    return modalities, np.stack(stack), labels


def _correct_count(stack: np.ndarray, labels: np.ndarray, weights: Sequence[float]) -> int:
    fused = np.tensordot(np.asarray(weights, dtype=np.float64), stack, axes=1)
    return int(np.sum(np.argmax(fused, axis=1) == labels))


def _exhaustive(stack, labels, grid) -> Tuple[Tuple[float, ...], int, int]:
    best, best_correct, searched = None, -1, 0
    for combo in itertools.product(grid, repeat=stack.shape[0]):
        if not any(a > 0 for a in combo):
            continue
        searched += 1
        correct = _correct_count(stack, labels, combo)
        if correct > best_correct:
            best, best_correct = combo, correct
    return best, best_correct, searched


def _beam(stack, labels, grid, beam_width) -> Tuple[Tuple[float, ...], int, int]:
    """逐个模态扩展部分权重向量，每步保留准确率最高的 beam_width 个；再补上所有单模态选择"""
    M = stack.shape[0]
    beam: List[Tuple[float, ...]] = [()]
    searched = 0
    for depth in range(M):
        scored = []
        for prefix in beam:
            for a in grid:
                cand = prefix + (a,)
                full = cand + (0.0,) * (M - depth - 1)
                # 全零前缀保留在 beam 中，但得分最低
                correct = _correct_count(stack, labels, full) if any(v > 0 for v in full) else -1
                searched += 1
                scored.append((-correct, cand))
        scored.sort()
        beam = [cand for _, cand in scored[:beam_width]]

    candidates = {cand for cand in beam if any(v > 0 for v in cand)}
    for m in range(M):
        for a in grid:
            if a > 0:
                candidates.add(tuple(a if i == m else 0.0 for i in range(M)))
    best, best_correct = None, -1
    for cand in sorted(candidates):
        correct = _correct_count(stack, labels, cand)
        searched += 1
        if correct > best_correct:
            best, best_correct = cand, correct
    return best, best_correct, searched


def tune_weights(val_scores: Mapping[str, np.ndarray], labels, grid: Iterable[float] = TUNE_GRID,
                 max_combinations: int = TUNE_MAX_COMBINATIONS,
                 beam_width: int = TUNE_BEAM_WIDTH) -> Tuple[EnsembleWeights, float]:
    """
    在网格上搜索验证集 Top-1 最高的权重

    按升序遍历网格，只在严格更好时替换，所以并列时返回字典序最小的权重向量。
    全零向量不参与搜索。网格组合总数 len(grid) ** 模态数（含全零向量）
    超过 max_combinations 时改用 beam search。
    返回 (权重, 验证集 Top-1)。
    """
    grid = sorted({float(g) for g in grid})
    if not grid:
        raise EnsembleError("搜索网格为空", "ENSEMBLE_EMPTY_GRID")
    if grid[0] < 0:
        raise EnsembleError(f"网格中有负权重: {grid[0]}", "ENSEMBLE_WEIGHTS")
    if not any(g > 0 for g in grid):
        raise EnsembleError("网格中没有正权重", "ENSEMBLE_EMPTY_GRID")
    modalities, stack, labels = _stack_modalities(val_scores, labels)
    if labels.size == 0:
        raise EnsembleError("验证集为空", "ENSEMBLE_EMPTY")

    total = len(grid) ** len(modalities)
    if total <= max_combinations:
        best, correct, searched = _exhaustive(stack, labels, grid)
    else:
        logger.info(f"网格组合数 {total} 超过 {max_combinations}，改用 beam search (宽度 {beam_width})")
        best, correct, searched = _beam(stack, labels, grid, beam_width)

    weights = EnsembleWeights.of(modalities, best)
    acc = correct / labels.size
    logger.log_weights_tuned(weights.as_dict(), acc, searched)
    return weights, acc


def align_scores(score_sets: Mapping[str, Tuple[Sequence[str], np.ndarray]]) -> Tuple[List[str], Dict[str, np.ndarray]]:
    """按第一个模态的样本顺序对齐各模态的分数矩阵"""
    if not score_sets:
        raise EnsembleError("没有分数文件", "ENSEMBLE_EMPTY")
    first = next(iter(score_sets))
    ids = list(score_sets[first][0])
    aligned = {}
    for modality, (m_ids, values) in score_sets.items():
        index = {sid: i for i, sid in enumerate(m_ids)}
        missing = [sid for sid in ids if sid not in index]
        if missing:
            raise EnsembleError(f"模态 {modality} 缺少样本 {missing[:5]}", "ENSEMBLE_MISSING_SAMPLE")
        if len(index) != len(ids):
            logger.warning(f"模态 {modality} 有 {len(index) - len(ids)} 个多余样本，已忽略")
        aligned[modality] = np.asarray(values)[[index[sid] for sid in ids]]
    return ids, aligned
