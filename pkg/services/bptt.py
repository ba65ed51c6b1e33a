"""
时间反向传播（BPTT）

前向缓存整段轨迹，反向逐步累积梯度；均在 float64 下精确计算
"""
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from models.params import ModelParams, Readout
from services.dynamics import phi_star, phi_star_derivative, step_batch

PARAM_NAMES = ("A_diag", "W", "C", "h")


class ForwardCache(NamedTuple):
    """前向缓存；prev[:, t] 为第 t 步更新前的状态，states[:, t] 为更新后的状态"""
    prev: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    active: Optional[np.ndarray]


def forward(
    params: ModelParams,
    Z0: Optional[np.ndarray],
    S: np.ndarray,
    active: Optional[np.ndarray] = None,
) -> ForwardCache:
    """批量前向，S 形状 (B, T, K)"""
    B, T, _ = S.shape
    Z = np.zeros((B, params.M)) if Z0 is None else np.asarray(Z0, dtype=np.float64)
    prev = np.zeros((B, T, params.M))
    states = np.zeros((B, T, params.M))
    for t in range(T):
        prev[:, t] = Z
        Z_next = step_batch(params, Z, S[:, t])
        if active is not None:
            Z_next = np.where(active[:, t:t + 1], Z_next, Z)
        Z = Z_next
        states[:, t] = Z
    return ForwardCache(prev, states, S, active)


def backward(
    params: ModelParams,
    cache: ForwardCache,
    d_states: Optional[np.ndarray],
    d_final: Optional[np.ndarray] = None,
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    反向传播

    Args:
        d_states: 损失对每个状态的直接梯度 (B, T, M)，None 表示 0
        d_final: 损失对最终状态的额外梯度 (B, M)（如解码器回传给编码器）

    Returns:
        (参数梯度字典, 对初始状态的梯度 (B, M))
    """
    B, T, M = cache.states.shape
    grads = {
        "A_diag": np.zeros(M),
        "W": np.zeros((M, M)),
        "C": np.zeros((M, params.K)),
        "h": np.zeros(M),
    }
    g = np.zeros((B, M)) if d_final is None else np.array(d_final, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        if d_states is not None:
            g = g + d_states[:, t]
        if cache.active is not None:
            on = cache.active[:, t:t + 1].astype(np.float64)
            g_step, g_hold = g * on, g * (1.0 - on)
        else:
            g_step, g_hold = g, 0.0
        z_prev = cache.prev[:, t]
        grads["A_diag"] += np.sum(g_step * z_prev, axis=0)
        grads["W"] += g_step.T @ phi_star(z_prev, params.P)
        grads["C"] += g_step.T @ cache.inputs[:, t]
        grads["h"] += np.sum(g_step, axis=0)
        g = g_step * params.A_diag + (g_step @ params.W) * phi_star_derivative(z_prev, params.P) + g_hold
    grads["A_diag"][: params.n_linear] = 0.0
    return grads, g


class ReadoutLoss(NamedTuple):
    loss: float
    d_states: np.ndarray
    d_D: np.ndarray
    d_bias: np.ndarray


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy_loss(readout: Readout, states: np.ndarray, targets: np.ndarray) -> ReadoutLoss:
    """
    逐位置 softmax 交叉熵，对所有有效位置取平均

    Args:
        states: (B, T, M)
        targets: (B, T) 类别索引，-1 表示该位置不计损失
    """
    mask = targets >= 0
    n = int(mask.sum())
    d_states = np.zeros_like(states)
    if n == 0:
        return ReadoutLoss(0.0, d_states, np.zeros_like(readout.D), np.zeros_like(readout.bias))
    Z = states[mask]
    logp = _log_softmax(Z @ readout.D.T + readout.bias)
    idx = targets[mask]
    loss = -float(np.sum(logp[np.arange(n), idx])) / n
    d_logits = np.exp(logp)
    d_logits[np.arange(n), idx] -= 1.0
    d_logits /= n
    d_states[mask] = d_logits @ readout.D
    return ReadoutLoss(loss, d_states, d_logits.T @ Z, d_logits.sum(axis=0))


def squared_error_loss(readout: Readout, states: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> ReadoutLoss:
    """
    平方误差，对有效位置与输出维度取平均

    Args:
        targets: (B, T, O)
        mask: (B, T) 布尔
    """
    n = int(mask.sum())
    d_states = np.zeros_like(states)
    if n == 0:
        return ReadoutLoss(0.0, d_states, np.zeros_like(readout.D), np.zeros_like(readout.bias))
    Z = states[mask]
    resid = Z @ readout.D.T + readout.bias - targets[mask]
    scale = 1.0 / (n * readout.O)
    loss = float(np.sum(resid ** 2)) * scale
    d_out = 2.0 * resid * scale
    d_states[mask] = d_out @ readout.D
    return ReadoutLoss(loss, d_states, d_out.T @ Z, d_out.sum(axis=0))
