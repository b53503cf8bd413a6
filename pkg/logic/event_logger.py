#!/usr/bin/env python3
"""
事件日志系统

专门用于记录训练与评估流程中的重要事件，包括：
- 训练运行的启动、每个epoch的结果
- 学习率与权重衰减的切换
- 检查点保存、早停与发散
- 评估、融合与权重搜索的结果
"""

import logging
import json
from datetime import datetime
from typing import Dict, Any, Optional
from pathlib import Path

from logic.constants import EVENT_LOG_FILE


class EventLogger:
    """事件日志记录器"""

    def __init__(self, log_file: str = EVENT_LOG_FILE):
        """
        初始化事件日志记录器

        Args:
            log_file: 日志文件路径
        """
        self.log_file = Path(log_file)

        # 创建专门的事件日志记录器
        self.logger = logging.getLogger('TrainingEvents')
        self.logger.setLevel(logging.INFO)

        # 避免重复添加处理器
        if not self.logger.handlers:
            if self.log_file.parent and not self.log_file.parent.exists():
                self.log_file.parent.mkdir(parents=True, exist_ok=True)
            # 文件处理器 - 记录所有事件到文件
            file_handler = logging.FileHandler(
                self.log_file,
                encoding='utf-8',
                mode='a'
            )
            file_handler.setLevel(logging.INFO)

            # 控制台处理器 - 只显示重要事件
            console_handler = logging.StreamHandler()
            console_handler.setLevel(logging.WARNING)

            formatter = logging.Formatter(
                '%(asctime)s - [EVENT] - %(levelname)s - %(message)s',
                datefmt='%Y-%m-%d %H:%M:%S'
            )
            file_handler.setFormatter(formatter)
            console_handler.setFormatter(formatter)

            self.logger.addHandler(file_handler)
            self.logger.addHandler(console_handler)

            # 防止消息传播到父logger，避免重复输出
            self.logger.propagate = False

        self.log_system_event("事件日志系统已启动")

    def _format_event(self, event_type: str, message: str, details: Optional[Dict[str, Any]] = None) -> str:
        """格式化事件消息"""
        return f"[{event_type}] {message}" + (f" | 详情: {json.dumps(details, ensure_ascii=False, sort_keys=True)}" if details else "")

    # 训练相关事件
    def log_run_started(self, run_name: str, seed: int, config_digest: str):
        """记录训练运行启动事件"""
        message = f"训练运行已启动: {run_name}"
        details = {
            "run_name": run_name,
            "seed": seed,
            "config_digest": config_digest,
            "start_time": datetime.now().isoformat()
        }
        self.logger.info(self._format_event("RUN_START", message, details))

    def log_epoch_finished(self, epoch: int, lr: float, train_loss: float,
                           train_top1: float, val_top1: Optional[float] = None):
        """记录epoch结束事件"""
        message = f"第{epoch}个epoch结束，训练损失: {train_loss:.6f}"
        details = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": train_loss,
            "train_top1": train_top1,
        }
        if val_top1 is not None:
            details["val_top1"] = val_top1
            message += f"，验证Top-1: {val_top1:.4f}"
        self.logger.info(self._format_event("EPOCH_END", message, details))

    def log_lr_changed(self, epoch: int, old_lr: float, new_lr: float, weight_decay: float):
        """记录学习率切换事件"""
        message = f"第{epoch}个epoch切换学习率: {old_lr:g} -> {new_lr:g}"
        details = {
            "epoch": epoch,
            "old_lr": old_lr,
            "new_lr": new_lr,
            "weight_decay": weight_decay
        }
        self.logger.info(self._format_event("LR_CHANGE", message, details))

    def log_checkpoint_saved(self, path: str, epoch: int, val_top1: Optional[float] = None):
        """记录检查点保存事件"""
        message = f"检查点已保存: {path}"
        details = {"path": str(path), "epoch": epoch}
        if val_top1 is not None:
            details["val_top1"] = val_top1
        self.logger.info(self._format_event("CHECKPOINT_SAVED", message, details))

    def log_early_stop(self, best_epoch: int, best_val_top1: float, reason: str = "验证精度不再提升"):
        """记录早停事件"""
        message = f"早停，最佳epoch: {best_epoch}，原因: {reason}"
        details = {"best_epoch": best_epoch, "best_val_top1": best_val_top1, "reason": reason}
        self.logger.info(self._format_event("EARLY_STOP", message, details))

    def log_divergence(self, epoch: int, step: int, parameter: Optional[str] = None):
        """记录训练发散事件"""
        message = f"第{epoch}个epoch第{step}步损失非有限值，训练中止"
        details = {"epoch": epoch, "step": step}
        if parameter:
            details["parameter"] = parameter
        self.logger.error(self._format_event("DIVERGENCE", message, details))

    def log_finetune_stopped(self, epoch: int, train_loss: float, stop_loss: float, reached: bool):
        """记录微调停止事件"""
        reason = "训练损失达到阈值" if reached else "达到epoch上限"
        message = f"微调在第{epoch}个epoch停止，原因: {reason}"
        details = {"epoch": epoch, "train_loss": train_loss, "stop_loss": stop_loss, "reached": reached}
        self.logger.info(self._format_event("FINETUNE_STOP", message, details))

    # 评估与融合事件
    def log_evaluation(self, split: str, top1: float, top5: float, num_samples: int):
        """记录评估结果事件"""
        message = f"{split}集评估完成，Top-1: {top1:.4f}，Top-5: {top5:.4f}"
        details = {"split": split, "top1": top1, "top5": top5, "num_samples": num_samples}
        self.logger.info(self._format_event("EVAL_DONE", message, details))

    def log_fusion(self, modalities: Dict[str, float], num_samples: int):
        """记录融合事件"""
        message = f"已融合{len(modalities)}个模态，样本数: {num_samples}"
        details = {"weights": modalities, "num_samples": num_samples}
        self.logger.info(self._format_event("FUSION_DONE", message, details))

    def log_weights_tuned(self, weights: Dict[str, float], accuracy: float, searched: int):
        """记录权重搜索结果事件"""
        message = f"融合权重搜索完成，验证Top-1: {accuracy:.4f}"
        details = {"weights": weights, "accuracy": accuracy, "searched": searched}
        self.logger.info(self._format_event("TUNE_DONE", message, details))

    def log_system_event(self, message: str, details: Optional[Dict[str, Any]] = None):
        """记录系统事件"""
        self.logger.info(self._format_event("SYSTEM", message, details))

    def log_error_event(self, error_message: str, error_type: str = "UNKNOWN", details: Optional[Dict[str, Any]] = None):
        """记录错误事件"""
        message = f"系统错误: {error_message}"
        event_details = {"error_type": error_type}
        if details:
            event_details.update(details)

        self.logger.error(self._format_event("ERROR", message, event_details))


# 全局事件日志记录器实例
_event_logger = None

def get_event_logger() -> EventLogger:
    """获取全局事件日志记录器实例"""
    global _event_logger
    if _event_logger is None:
        _event_logger = EventLogger()
    return _event_logger
