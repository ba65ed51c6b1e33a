"""
Adam 优化器、余弦退火学习率与梯度裁剪
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np


@dataclass
class AdamState:
    """Adam 一阶/二阶矩估计（beta1=0.9, beta2=0.999, eps=1e-8）"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(
    state: AdamState,
    params: Dict[str, np.ndarray],
    gradients: Mapping[str, np.ndarray],
    lr: float,
    zero_masks: Optional[Mapping[str, np.ndarray]] = None,
) -> AdamState:
    """
    原地执行一步带偏差校正的 Adam 更新

    zero_masks 中标记的元素在更新后被重新置为精确的 0（A 的线性部分）。
    """
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    for name, g in gradients.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    if zero_masks:
        for name, mask in zero_masks.items():
            params[name][mask] = 0.0
    return state


def cosine_lr(epoch: float, total_epochs: int, base_lr: float) -> float:
    """余弦退火：base_lr·(1+cos(π·epoch/total))/2，下限 0"""
    if total_epochs <= 0:
        return base_lr
    return max(0.0, base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0)


def global_norm(gradients: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in gradients.values()))


def clip_gradients(gradients: Dict[str, np.ndarray], max_norm: Optional[float]) -> Dict[str, np.ndarray]:
    """按全局范数裁剪；max_norm 为 None 时不裁剪"""
    if max_norm is None:
        return gradients
    norm = global_norm(gradients)
    if norm <= max_norm or norm == 0.0:
        return gradients
    scale = max_norm / norm
    return {k: g * scale for k, g in gradients.items()}
