#!/usr/bin/env python3
"""
统一日志系统

提供一个包装器，把训练流程中的业务事件同时写入模块日志和事件日志；
调试和技术细节只写模块日志。
"""

import logging
from typing import Dict, Any, Optional
from logic.event_logger import get_event_logger


class UnifiedLogger:
    """统一日志记录器，结合传统日志和事件日志"""

    def __init__(self, name: str):
        """
        初始化统一日志记录器

        Args:
            name: 日志记录器名称
        """
        self.traditional_logger = logging.getLogger(name)
        self.event_logger = get_event_logger()
        self.name = name

    # 训练相关日志
    def log_run_start(self, run_name: str, seed: int, config_digest: str):
        """记录训练运行启动"""
        self.traditional_logger.info(f"开始训练: {run_name}, 种子: {seed}, 配置摘要: {config_digest[:12]}")
        self.event_logger.log_run_started(run_name, seed, config_digest)

    def log_epoch(self, epoch: int, lr: float, train_loss: float, train_top1: float,
                  val_top1: Optional[float] = None):
        """记录epoch结果"""
        message = f"epoch {epoch}: lr={lr:g}, loss={train_loss:.6f}, train_top1={train_top1:.4f}"
        if val_top1 is not None:
            message += f", val_top1={val_top1:.4f}"
        self.traditional_logger.info(message)
        self.event_logger.log_epoch_finished(epoch, lr, train_loss, train_top1, val_top1)

    def log_lr_change(self, epoch: int, old_lr: float, new_lr: float, weight_decay: float):
        """记录学习率切换"""
        self.traditional_logger.info(f"epoch {epoch}: 学习率 {old_lr:g} -> {new_lr:g}, 权重衰减 {weight_decay:g}")
        self.event_logger.log_lr_changed(epoch, old_lr, new_lr, weight_decay)

    def log_checkpoint(self, path: str, epoch: int, val_top1: Optional[float] = None):
        """记录检查点保存"""
        self.traditional_logger.info(f"保存检查点: {path} (epoch {epoch})")
        self.event_logger.log_checkpoint_saved(path, epoch, val_top1)

    def log_early_stop(self, best_epoch: int, best_val_top1: float, reason: str):
        """记录早停"""
        self.traditional_logger.info(f"早停: 最佳epoch {best_epoch}, val_top1={best_val_top1:.4f}, {reason}")
        self.event_logger.log_early_stop(best_epoch, best_val_top1, reason)

    def log_divergence(self, epoch: int, step: int, parameter: Optional[str] = None):
        """记录训练发散"""
        self.traditional_logger.error(f"训练发散: epoch {epoch}, step {step}, 参数: {parameter}")
        self.event_logger.log_divergence(epoch, step, parameter)

    def log_finetune_stop(self, epoch: int, train_loss: float, stop_loss: float, reached: bool):
        """记录微调停止"""
        self.traditional_logger.info(
            f"微调停止: epoch {epoch}, loss={train_loss:.6f}, stop_loss={stop_loss:g}, 达到阈值={reached}")
        self.event_logger.log_finetune_stopped(epoch, train_loss, stop_loss, reached)

    # 评估与融合日志
    def log_evaluation(self, split: str, top1: float, top5: float, num_samples: int):
        """记录评估结果"""
        self.traditional_logger.info(f"{split}: top1={top1:.4f}, top5={top5:.4f}, 样本数={num_samples}")
        self.event_logger.log_evaluation(split, top1, top5, num_samples)

    def log_fusion(self, weights: Dict[str, float], num_samples: int):
        """记录融合"""
        self.traditional_logger.info(f"融合权重: {weights}, 样本数: {num_samples}")
        self.event_logger.log_fusion(weights, num_samples)

    def log_weights_tuned(self, weights: Dict[str, float], accuracy: float, searched: int):
        """记录融合权重搜索结果"""
        self.traditional_logger.info(f"融合权重 {weights}，验证集 Top-1 {accuracy:.4f}，共评估 {searched} 组")
        self.event_logger.log_weights_tuned(weights, accuracy, searched)

    # 错误日志
    def log_failure(self, operation: str, error: Exception, tag: str = "UNKNOWN"):
        """记录流程失败"""
        message = f"{operation}时出错: {error}"
        self.traditional_logger.error(message)
        self.event_logger.log_error_event(message, tag)

    # 传统日志方法（保持兼容性）
    def info(self, message: str, use_event_log: bool = False, details: Optional[Dict[str, Any]] = None):
        """记录信息日志"""
        self.traditional_logger.info(message)
        if use_event_log:
            self.event_logger.log_system_event(message, details)

    def warning(self, message: str):
        """记录警告日志"""
        self.traditional_logger.warning(message)

    def debug(self, message: str):
        """记录调试日志（不使用事件日志）"""
        self.traditional_logger.debug(message)


# 全局统一日志记录器缓存
_unified_loggers = {}

def get_unified_logger(name: str) -> UnifiedLogger:
    """获取统一日志记录器实例"""
    if name not in _unified_loggers:
        _unified_loggers[name] = UnifiedLogger(name)
    return _unified_loggers[name]
