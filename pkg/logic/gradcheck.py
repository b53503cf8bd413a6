"""
有限差分梯度检查

对模型每个参数的每个元素做中心差分，与 autograd 的解析梯度比较。
模型必须已经转成 float64，且 loss_fn 在重复调用时结果确定（例如 DropGraph 掩码已固定）。
"""

import logging
from typing import Callable, Dict, Optional

import torch
import torch.nn as nn

from logic.errors import ModelError

logger = logging.getLogger('gradcheck')


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """‖ga − gn‖∞ / max(‖ga‖∞, ‖gn‖∞, 1e-8)"""
    diff = (analytic - numeric).abs().max().item()
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-8)
    return diff / scale


def finite_difference_check(model: nn.Module, loss_fn: Callable[[nn.Module], torch.Tensor],
                            eps: float = 1e-5, max_entries: Optional[int] = None) -> Dict[str, float]:
    """
    返回 {参数名: 相对误差}

    max_entries 限制每个参数检查的元素个数（取前 max_entries 个），None 表示全部。
    """
    params = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    for name, p in params:
        if p.dtype != torch.float64:
            raise ModelError(f"梯度检查需要 float64 参数，{name} 是 {p.dtype}", "MODEL_DTYPE")

    model.zero_grad(set_to_none=True)
    loss = loss_fn(model)
    loss.backward()
    analytic = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for name, p in params}
    model.zero_grad(set_to_none=True)

    errors = {}
    with torch.no_grad():
        for name, p in params:
            flat = p.view(-1)
            count = flat.numel() if max_entries is None else min(max_entries, flat.numel())
            numeric = torch.zeros(count, dtype=torch.float64)
            for i in range(count):
                original = flat[i].item()
                flat[i] = original + eps
                plus = loss_fn(model).item()
                flat[i] = original - eps
                minus = loss_fn(model).item()
                flat[i] = original
                numeric[i] = (plus - minus) / (2 * eps)
            errors[name] = relative_error(analytic[name].reshape(-1)[:count], numeric)
    worst = max(errors.items(), key=lambda kv: kv[1]) if errors else ("-", 0.0)
    logger.info(f"梯度检查: {len(errors)} 个参数, 最大相对误差 {worst[1]:.3e} ({worst[0]})")
    return errors
