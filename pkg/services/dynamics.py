"""
AL-RNN 前向动力学

纯函数实现，参数对象只读，可被任意线程并发调用
"""
import logging
from typing import Optional, Sequence

import numpy as np

from models.errors import DimensionMismatchError, InvalidConfigurationError, TrajectoryDivergedError
from models.params import Bitcode, ModelParams, Readout, Trajectory

logger = logging.getLogger(__name__)


def _as_vector(name: str, value: Sequence[float], length: int) -> np.ndarray:
    vec = np.asarray(value, dtype=np.float64)
    if vec.shape != (length,):
        raise DimensionMismatchError(
            f"{name} has shape {vec.shape}, expected ({length},)",
            {"field": name, "got": list(vec.shape), "expected": [length]},
        )
    return vec


def phi_star(z: Sequence[float], P: int) -> np.ndarray:
    """
    部分 ReLU：前 M-P 个坐标保持不变，后 P 个坐标取 max(0, ·)

    支持任意前导批维度，最后一维为 M。
    """
    z = np.asarray(z, dtype=np.float64)
    M = z.shape[-1]
    if P < 0 or P > M:
        raise InvalidConfigurationError(f"P={P} must lie in [0, M={M}]", {"M": M, "P": P})
    out = np.array(z, dtype=np.float64)
    if P:
        out[..., M - P:] = np.maximum(out[..., M - P:], 0.0)
    return out


def phi_star_derivative(z: np.ndarray, P: int) -> np.ndarray:
    """Φ* 的逐元素导数；ReLU 在 0 处的次梯度取 0"""
    M = z.shape[-1]
    d = np.ones_like(z, dtype=np.float64)
    if P:
        d[..., M - P:] = (z[..., M - P:] > 0.0).astype(np.float64)
    return d


def step(params: ModelParams, z_prev: Sequence[float], s: Optional[Sequence[float]] = None) -> np.ndarray:
    """单步更新 z_t = A ⊙ z_{t-1} + W Φ*(z_{t-1}) + C s_t + h；s 为 None 表示零输入"""
    z_prev = _as_vector("z_prev", z_prev, params.M)
    out = params.A_diag * z_prev + params.W @ phi_star(z_prev, params.P) + params.h
    if s is not None:
        out = out + params.C @ _as_vector("s", s, params.K)
    return out


def step_batch(params: ModelParams, Z_prev: np.ndarray, S: Optional[np.ndarray] = None) -> np.ndarray:
    """批量单步更新，Z_prev 形状 (B, M)，S 形状 (B, K)"""
    out = Z_prev * params.A_diag + phi_star(Z_prev, params.P) @ params.W.T + params.h
    if S is not None:
        out = out + S @ params.C.T
    return out


def rollout(
    params: ModelParams,
    z0: Optional[Sequence[float]],
    inputs: Sequence[Sequence[float]],
) -> Trajectory:
    """迭代 step 得到轨迹；z0 为 None 时取 0"""
    z = np.zeros(params.M) if z0 is None else _as_vector("z0", z0, params.M)
    S = np.asarray(inputs, dtype=np.float64).reshape(-1, params.K) if len(inputs) else np.zeros((0, params.K))
    states = np.zeros((S.shape[0], params.M))
    for t in range(S.shape[0]):
        z = step(params, z, S[t])
        states[t] = z
    return Trajectory(states=states, inputs=S)


def rollout_batch(
    params: ModelParams,
    Z0: Optional[np.ndarray],
    S: np.ndarray,
    active: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    批量展开

    Args:
        Z0: 初始状态 (B, M)，None 表示全零
        S: 输入 (B, T, K)
        active: (B, T) 布尔掩码，False 的位置保持上一状态（变长序列右侧填充）

    Returns:
        隐状态 (B, T, M)
    """
    B, T, _ = S.shape
    Z = np.zeros((B, params.M)) if Z0 is None else np.asarray(Z0, dtype=np.float64)
    states = np.zeros((B, T, params.M))
    for t in range(T):
        Z_next = step_batch(params, Z, S[:, t])
        if active is not None:
            Z_next = np.where(active[:, t:t + 1], Z_next, Z)
        Z = Z_next
        states[:, t] = Z
    return states


def autonomous_rollout(
    params: ModelParams,
    z0: Optional[Sequence[float]],
    n_steps: int,
    check_finite: bool = True,
) -> np.ndarray:
    """零输入自由演化 n_steps 步，返回 (n_steps, M)"""
    z = np.zeros(params.M) if z0 is None else _as_vector("z0", z0, params.M)
    states = np.zeros((n_steps, params.M))
    for t in range(n_steps):
        z = step(params, z)
        if check_finite and not np.all(np.isfinite(z)):
            logger.error(f"Autonomous rollout diverged at step {t + 1}")
            raise TrajectoryDivergedError(t + 1)
        states[t] = z
    return states


def unit_mask(bits: Sequence[int], M: int) -> np.ndarray:
    """子区域掩码：线性单元恒为 1，非线性单元取对应位"""
    P = len(bits)
    mask = np.ones(M)
    if P:
        mask[M - P:] = np.asarray(bits, dtype=np.float64)
    return mask


def bitcode_of(z: Sequence[float], P: int) -> Bitcode:
    """第 i 位为 1 当且仅当第 M-P+i 个坐标严格大于 0"""
    z = np.asarray(z, dtype=np.float64)
    M = z.shape[-1]
    if P < 0 or P > M:
        raise InvalidConfigurationError(f"P={P} must lie in [0, M={M}]", {"M": M, "P": P})
    bits = tuple(int(v > 0.0) for v in z[M - P:]) if P else ()
    return Bitcode.from_bits(bits)


def bitcode_values(states: np.ndarray, P: int) -> list[int]:
    """批量计算 bitcode 整数值（P 较大时使用 Python 大整数）"""
    states = np.asarray(states, dtype=np.float64).reshape(-1, states.shape[-1])
    if P == 0:
        return [0] * states.shape[0]
    bits = states[:, -P:] > 0.0
    if P <= 62:
        weights = np.left_shift(np.int64(1), np.arange(P - 1, -1, -1, dtype=np.int64))
        return [int(v) for v in bits.astype(np.int64) @ weights]
    return [int("".join("1" if b else "0" for b in row), 2) for row in bits]


def readout_apply(r: Readout, z: Sequence[float]) -> np.ndarray:
    """y = D z + bias"""
    return r.D @ _as_vector("z", z, r.M) + r.bias


def jacobian_at(params: ModelParams, z: Sequence[float]) -> np.ndarray:
    """step 在状态 z 处的雅可比 diag(A) + W diag(Φ*'(z))"""
    z = _as_vector("z", z, params.M)
    return np.diag(params.A_diag) + params.W * phi_star_derivative(z, params.P)[None, :]
