"""
训练、评估与微调

训练按 TrainSchedule 逐 epoch 设置学习率和权重衰减，以验证集 Top-1 选择最佳检查点；
评估用 eval 模式和均匀采样，导出融合用的分数文件；
微调在训练集 + 验证集上继续训练，直到 epoch 平均损失降到原训练的 stop_loss。
"""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import markdown
import numpy as np
import torch
import torch.nn as nn

from logic.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from logic.config import ExperimentConfig, config_from_text, load_config
from logic.database import RunDatabase
from logic.dataset import FeatureDataset, SkeletonDataset, make_loader, require_files
from logic.ensemble import predict, topk_correct
from logic.errors import DataError, SamSlrError, TrainingError
from logic.file_formats import ManifestRow, read_manifest, write_scores
from logic.losses import LabelSmoothingCrossEntropy
from logic.slgcn import SLGCN, first_non_finite
from logic.sstcn import SSTCN
from logic.unified_logger import get_unified_logger

logger = get_unified_logger('trainer')

BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
DIVERGED_CHECKPOINT = "last_finite.ckpt"
FINETUNED_CHECKPOINT = "finetuned.ckpt"
CURVE_FILE = "curve.csv"
VAL_SCORES_FILE = "scores_val.csv"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    weight_decay: float
    train_loss: float
    train_top1: float
    val_top1: Optional[float] = None


@dataclass
class TrainResult:
    output_dir: Path
    checkpoint: Path
    curve: List[EpochRecord]
    best_epoch: Optional[int]
    best_val_top1: Optional[float]
    stop_loss: Optional[float]
    scores_path: Optional[Path] = None
    run_id: Optional[int] = None


@dataclass
class FinetuneResult:
    checkpoint: Path
    epochs_run: int
    final_loss: float
    stop_loss: float
    reached: bool
    losses: List[float] = field(default_factory=list)


@dataclass
class EvalReport:
    split: str
    top1: float
    top5: float
    num_samples: int
    num_labeled: int
    top_k: int
    per_class: Dict[int, Tuple[int, int]]  # 类别 -> (正确数, 样本数)
    confusions: List[Tuple[int, int, int]]  # (真实类别, 预测类别, 次数)，按次数降序
    predictions: np.ndarray = field(repr=False, default=None)
    scores_path: Optional[Path] = None

    def class_accuracy(self, label: int) -> Optional[float]:
        correct, total = self.per_class.get(label, (0, 0))
        return correct / total if total else None

    def render_markdown(self) -> str:
        lines = [
            f"# 评估报告: {self.split}",
            "",
            "| 指标 | 值 |",
            "| --- | --- |",
            f"| 样本数 | {self.num_samples} |",
            f"| 有标签样本数 | {self.num_labeled} |",
            f"| Top-1 | {self.top1:.4f} |",
            f"| Top-{self.top_k} | {self.top5:.4f} |",
            "",
            "## 各类别准确率",
            "",
            "| 类别 | 正确 | 样本 | 准确率 |",
            "| --- | --- | --- | --- |",
        ]
        for label in sorted(self.per_class):
            correct, total = self.per_class[label]
            lines.append(f"| {label} | {correct} | {total} | {correct / total:.4f} |")
        lines += ["", "## 最常见的混淆", ""]
        if self.confusions:
            lines += ["| 真实 | 预测 | 次数 |", "| --- | --- | --- |"]
            lines += [f"| {t} | {p} | {n} |" for t, p, n in self.confusions]
        else:
            lines.append("无")
        return "\n".join(lines) + "\n"

    def to_html(self) -> str:
        return markdown.markdown(self.render_markdown(), extensions=["tables"])


def compute_report(split: str, scores: np.ndarray, labels: Sequence[Optional[int]],
                   max_confusions: int = 10) -> EvalReport:
    """由分数矩阵和标签计算 Top-1 / Top-5、各类别准确率和混淆统计；无标签的样本只参与预测"""
    scores = np.asarray(scores, dtype=np.float64)
    predictions = predict(scores) if scores.size else np.zeros(0, dtype=np.int64)
    labeled = [i for i, label in enumerate(labels) if label is not None]
    top_k = min(5, scores.shape[1]) if scores.ndim == 2 and scores.shape[1] else 1
    per_class: Dict[int, Tuple[int, int]] = {}
    pairs: Dict[Tuple[int, int], int] = {}
    top1 = top5 = 0.0
    if labeled:
        y = np.array([labels[i] for i in labeled])
        sub = scores[labeled]
        top1 = float(np.mean(predictions[labeled] == y))
        top5 = float(np.mean(topk_correct(sub, y, top_k)))
        for i in labeled:
            true, pred = int(labels[i]), int(predictions[i])
            correct, total = per_class.get(true, (0, 0))
            per_class[true] = (correct + int(true == pred), total + 1)
            if true != pred:
                pairs[(true, pred)] = pairs.get((true, pred), 0) + 1
    confusions = sorted(((t, p, n) for (t, p), n in pairs.items()), key=lambda c: (-c[2], c[0], c[1]))
    return EvalReport(split, top1, top5, len(labels), len(labeled), top_k, per_class,
                      confusions[:max_confusions], predictions)


# ---------------------------------------------------------------------------
# 组件
# ---------------------------------------------------------------------------

def seed_everything(seed: int):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def build_model(config: ExperimentConfig) -> nn.Module:
    if config.net == "slgcn":
        return SLGCN(config.slgcn, config.graph())
    return SSTCN(config.sstcn)


def build_dataset(config: ExperimentConfig, rows: Sequence[ManifestRow], train: bool):
    if config.net == "slgcn":
        return SkeletonDataset(rows, config.data_dir, config.graph(), config.stream, config.frame_size,
                               config.augmentation, train=train, augment_enabled=config.augment)
    return FeatureDataset(rows, config.data_dir, config.sstcn)


def make_optimizer(config: ExperimentConfig, model: nn.Module) -> torch.optim.Optimizer:
    schedule = config.schedule
    if config.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=schedule.initial_lr,
                                weight_decay=schedule.initial_weight_decay)
    return torch.optim.SGD(model.parameters(), lr=schedule.initial_lr, momentum=config.momentum,
                           weight_decay=schedule.initial_weight_decay)


def set_hyperparameters(optimizer: torch.optim.Optimizer, lr: float, weight_decay: float):
    for group in optimizer.param_groups:
        group["lr"] = lr
        group["weight_decay"] = weight_decay


def check_labels(rows: Sequence[ManifestRow], num_classes: int):
    for row in rows:
        if row.label is None:
            raise DataError(f"样本 {row.sample_id} 没有标签", "DATA_LABEL")
        if not 0 <= row.label < num_classes:
            raise DataError(f"样本 {row.sample_id} 的标签 {row.label} 超出 [0, {num_classes})", "DATA_LABEL_RANGE")


def run_epoch(model: nn.Module, loader, optimizer: torch.optim.Optimizer,
              criterion: nn.Module) -> Tuple[float, float]:
    """
    训练一个epoch，返回 (样本平均损失, 训练 Top-1)

    每一步在 optimizer.step() 之前检查损失和梯度，出现 NaN/inf 时抛出 TrainingError，
    此时模型参数仍是上一步的有限值。
    """
    model.train()
    total_loss, correct, seen = 0.0, 0, 0
    for step, (inputs, labels, _) in enumerate(loader):
        optimizer.zero_grad(set_to_none=True)
        logits = model(inputs)
        loss = criterion(logits, labels)
        if not torch.isfinite(loss):
            raise TrainingError(f"第 {step} 步损失不是有限值", "LOSS_NON_FINITE")
        loss.backward()
        culprit = first_non_finite(model, use_grad=True)
        if culprit is not None:
            raise TrainingError(f"第 {step} 步参数 {culprit} 的梯度不是有限值", "GRADIENT_NON_FINITE")
        optimizer.step()
        batch = labels.shape[0]
        total_loss += float(loss.detach()) * batch
        correct += int((logits.detach().argmax(dim=1) == labels).sum())
        seen += batch
    if seen == 0:
        raise DataError("训练集为空", "DATA_EMPTY")
    return total_loss / seen, correct / seen


def predict_scores(model: nn.Module, loader) -> np.ndarray:
    """eval 模式下按数据集顺序计算分数，形状 样本数 × n_c"""
    was_training = model.training
    model.eval()
    chunks = []
    with torch.no_grad():
        for inputs, _, _ in loader:
            chunks.append(model(inputs).cpu().numpy().astype(np.float64))
    model.train(was_training)
    if not chunks:
        return np.zeros((0, 0))
    return np.concatenate(chunks, axis=0)


def top1_of(scores: np.ndarray, rows: Sequence[ManifestRow]) -> float:
    labels = np.array([r.label for r in rows])
    return float(np.mean(predict(scores) == labels))


def write_curve(path: Path, curve: Sequence[EpochRecord]):
    with open(path, "w", newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "lr", "weight_decay", "train_loss", "train_top1", "val_top1"])
        for r in curve:
            writer.writerow([r.epoch, repr(r.lr), repr(r.weight_decay), repr(r.train_loss), repr(r.train_top1),
                             "" if r.val_top1 is None else repr(r.val_top1)])


def read_curve(path) -> List[EpochRecord]:
    records = []
    with open(path, newline='', encoding='utf-8') as f:
        for row in csv.DictReader(f):
            records.append(EpochRecord(
                int(row["epoch"]), float(row["lr"]), float(row["weight_decay"]), float(row["train_loss"]),
                float(row["train_top1"]), float(row["val_top1"]) if row["val_top1"] else None))
    return records


def _meta(config: ExperimentConfig, epoch: Optional[int], best_epoch: Optional[int],
          best_val_top1: Optional[float], stop_loss: Optional[float]) -> Dict:
    return {
        "net": config.net,
        "stream": config.stream,
        "num_classes": config.num_classes,
        "epoch": epoch,
        "best_epoch": best_epoch,
        "best_val_top1": best_val_top1,
        "stop_loss": stop_loss,
    }


# ---------------------------------------------------------------------------
# 训练
# ---------------------------------------------------------------------------

def train(config: ExperimentConfig, output_dir=None) -> TrainResult:
    """
    按训练计划训练，保存验证集 Top-1 最高的检查点

    没有验证样本时按训练 Top-1 选择。输出目录中有 best.ckpt、last.ckpt、curve.csv、
    scores_val.csv 和运行记录数据库。
    """
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed_everything(config.seed)
    schedule = config.schedule

    train_rows = read_manifest(config.manifest, "train")
    val_rows = read_manifest(config.manifest, "val")
    if schedule.total_epochs > 0 and not train_rows:
        raise DataError(f"{config.manifest} 中没有训练样本", "DATA_EMPTY")
    require_files(train_rows + val_rows, config.data_dir)
    check_labels(train_rows + val_rows, config.num_classes)

    model = build_model(config)
    optimizer = make_optimizer(config, model)
    criterion = LabelSmoothingCrossEntropy(config.label_smoothing)
    train_set = build_dataset(config, train_rows, train=True)
    train_loader = make_loader(train_set, schedule.batch_size, True, config.seed, config.workers)
    val_loader = make_loader(build_dataset(config, val_rows, train=False), schedule.batch_size, False,
                             config.seed, config.workers)

    run_name = f"{config.net}_{config.stream}" if config.net == "slgcn" else "sstcn"
    db = RunDatabase.for_output_dir(out)
    run_id = db.start_run(run_name, config.net, config.stream, config.seed, config.digest)
    logger.log_run_start(run_name, config.seed, config.digest)

    best_path = out / BEST_CHECKPOINT
    curve: List[EpochRecord] = []
    best_metric, best_epoch, best_val, stop_loss = -1.0, None, None, None
    since_best = 0
    current_lr = None
    step = 0

    if schedule.total_epochs == 0:
        save_checkpoint(best_path, model, config.text, 0, _meta(config, None, None, None, None))
        logger.log_checkpoint(str(best_path), 0)

    try:
        for epoch in range(schedule.total_epochs):
            lr, wd = schedule.lr_at(epoch), schedule.weight_decay_at(epoch)
            if current_lr is not None and lr != current_lr:
                logger.log_lr_change(epoch, current_lr, lr, wd)
            set_hyperparameters(optimizer, lr, wd)
            current_lr = lr
            train_set.set_epoch(epoch)

            try:
                train_loss, train_top1 = run_epoch(model, train_loader, optimizer, criterion)
            except TrainingError as e:
                diverged = out / DIVERGED_CHECKPOINT
                save_checkpoint(diverged, model, config.text, step,
                                _meta(config, epoch, best_epoch, best_val, stop_loss))
                logger.log_divergence(epoch, step, e.message)
                db.finish_run(run_id, "diverged", best_epoch, best_val, stop_loss)
                raise TrainingError(f"epoch {epoch} 训练发散（{e.message}），最后的有限状态已保存到 {diverged}",
                                    "TRAIN_DIVERGED")
            step += len(train_loader)

            val_top1 = top1_of(predict_scores(model, val_loader), val_rows) if val_rows else None
            record = EpochRecord(epoch, lr, wd, train_loss, train_top1, val_top1)
            curve.append(record)
            db.add_epoch(run_id, epoch, lr, wd, train_loss, train_top1, val_top1)
            logger.log_epoch(epoch, lr, train_loss, train_top1, val_top1)

            metric = val_top1 if val_top1 is not None else train_top1
            if metric > best_metric:
                best_metric, best_epoch, best_val, stop_loss = metric, epoch, val_top1, train_loss
                since_best = 0
                save_checkpoint(best_path, model, config.text, step,
                                _meta(config, epoch, best_epoch, best_val, stop_loss))
                logger.log_checkpoint(str(best_path), epoch, val_top1)
            else:
                since_best += 1
                if config.patience and since_best >= config.patience:
                    logger.log_early_stop(best_epoch, best_metric, f"连续 {since_best} 个epoch没有提升")
                    break
    except SamSlrError as e:
        if not isinstance(e, TrainingError) or e.tag != "TRAIN_DIVERGED":
            logger.log_failure("训练", e, e.tag)
            db.finish_run(run_id, "failed", best_epoch, best_val, stop_loss)
        db.close()
        raise

    save_checkpoint(out / LAST_CHECKPOINT, model, config.text, step,
                    _meta(config, len(curve) - 1 if curve else None, best_epoch, best_val, stop_loss))
    write_curve(out / CURVE_FILE, curve)

    scores_path = None
    load_checkpoint(best_path, model, expected_config_text=config.text)
    if val_rows:
        scores_path = out / VAL_SCORES_FILE
        write_scores(scores_path, [r.sample_id for r in val_rows], predict_scores(model, val_loader))

    db.finish_run(run_id, "finished", best_epoch, best_val, stop_loss)
    db.close()
    logger.info(f"训练完成: 最佳epoch {best_epoch}, 检查点 {best_path}")
    return TrainResult(out, best_path, curve, best_epoch, best_val, stop_loss, scores_path, run_id)


# ---------------------------------------------------------------------------
# 评估
# ---------------------------------------------------------------------------

def restore(checkpoint_path) -> Tuple[ExperimentConfig, nn.Module, Dict]:
    """由检查点中保存的配置重建模型并载入参数"""
    ckpt = read_checkpoint(checkpoint_path)
    config = config_from_text(ckpt.config_text)
    model = build_model(config)
    load_checkpoint(checkpoint_path, model, expected_config_text=config.text)
    return config, model, ckpt.meta


def evaluate(checkpoint_path, split: str, scores_out, manifest=None, report_out=None) -> EvalReport:
    """
    在某个划分上推理并导出分数文件

    manifest 为空时使用训练时的清单。清单中缺失的文件逐个记录后中止。
    report_out 以 .html 结尾时写 HTML，否则写 markdown。
    """
    config, model, _ = restore(checkpoint_path)
    if manifest is not None:
        config = replace(config, manifest=Path(manifest).resolve())
    rows = read_manifest(config.manifest, split)
    if not rows:
        raise DataError(f"{config.manifest} 中没有 {split} 样本", "DATA_EMPTY")
    require_files(rows, config.data_dir)
    for row in rows:
        if row.label is not None and not 0 <= row.label < config.num_classes:
            raise DataError(f"样本 {row.sample_id} 的标签 {row.label} 超出 [0, {config.num_classes})",
                            "DATA_LABEL_RANGE")

    loader = make_loader(build_dataset(config, rows, train=False), config.schedule.batch_size, False,
                         config.seed, config.workers)
    scores = predict_scores(model, loader)
    write_scores(scores_out, [r.sample_id for r in rows], scores)

    report = compute_report(split, scores, [r.label for r in rows])
    report.scores_path = Path(scores_out)
    if report.num_labeled == 0:
        logger.warning(f"{split} 没有标签，只导出分数")
    logger.log_evaluation(split, report.top1, report.top5, report.num_samples)
    if report_out is not None:
        report_out = Path(report_out)
        report_out.parent.mkdir(parents=True, exist_ok=True)
        text = report.to_html() if report_out.suffix.lower() in (".html", ".htm") else report.render_markdown()
        report_out.write_text(text, encoding='utf-8')
    return report


# ---------------------------------------------------------------------------
# 微调
# ---------------------------------------------------------------------------

def finetune(checkpoint_path, config_path=None, stop_loss: Optional[float] = None,
             cap: Optional[int] = None, output_dir=None) -> FinetuneResult:
    """
    在训练集 + 验证集上继续训练

    epoch 平均损失 ≤ stop_loss 或达到 cap 个epoch时停止。stop_loss 为空时取检查点中
    原训练记录的值，两者都没有则拒绝。学习率使用原训练最佳epoch时的学习率。
    """
    ckpt = read_checkpoint(checkpoint_path)
    config = load_config(config_path) if config_path else config_from_text(ckpt.config_text)
    if stop_loss is None:
        stop_loss = ckpt.meta.get("stop_loss")
    if stop_loss is None or (isinstance(stop_loss, float) and math.isnan(stop_loss)):
        raise TrainingError("没有 stop_loss：检查点中没有记录，也没有在命令行给出", "FINETUNE_NO_STOP_LOSS")
    stop_loss = float(stop_loss)
    cap = config.finetune_cap if cap is None else cap
    if cap < 1:
        raise TrainingError(f"微调epoch上限必须为正: {cap}", "FINETUNE_CAP")

    seed_everything(config.seed)
    model = build_model(config)
    load_checkpoint(checkpoint_path, model)

    rows = read_manifest(config.manifest, "train") + read_manifest(config.manifest, "val")
    if not rows:
        raise DataError(f"{config.manifest} 中没有训练或验证样本", "DATA_EMPTY")
    require_files(rows, config.data_dir)
    check_labels(rows, config.num_classes)

    start_epoch = ckpt.meta.get("best_epoch") or 0
    lr = config.schedule.lr_at(start_epoch)
    wd = config.schedule.weight_decay_at(start_epoch)
    optimizer = make_optimizer(config, model)
    set_hyperparameters(optimizer, lr, wd)
    criterion = LabelSmoothingCrossEntropy(config.label_smoothing)
    dataset = build_dataset(config, rows, train=True)
    loader = make_loader(dataset, config.schedule.batch_size, True, config.seed, config.workers)

    out = Path(output_dir or Path(checkpoint_path).parent)
    out.mkdir(parents=True, exist_ok=True)
    target = out / FINETUNED_CHECKPOINT
    losses: List[float] = []
    reached = False
    for epoch in range(cap):
        dataset.set_epoch(epoch)
        try:
            loss, top1 = run_epoch(model, loader, optimizer, criterion)
        except TrainingError as e:
            diverged = out / DIVERGED_CHECKPOINT
            save_checkpoint(diverged, model, config.text, epoch, _meta(config, epoch, None, None, stop_loss))
            logger.log_divergence(epoch, epoch, e.message)
            raise TrainingError(f"微调第 {epoch} 个epoch发散（{e.message}）", "TRAIN_DIVERGED")
        except SamSlrError as e:
            logger.log_failure("微调", e, e.tag)
            raise
        losses.append(loss)
        logger.log_epoch(epoch, lr, loss, top1)
        if loss <= stop_loss:
            reached = True
            break

    save_checkpoint(target, model, config.text, len(losses),
                    _meta(config, len(losses) - 1, ckpt.meta.get("best_epoch"), ckpt.meta.get("best_val_top1"),
                          stop_loss))
    logger.log_finetune_stop(len(losses) - 1, losses[-1], stop_loss, reached)
    logger.log_checkpoint(str(target), len(losses) - 1)
    return FinetuneResult(target, len(losses), losses[-1], stop_loss, reached, losses)
