"""
动力学分析服务

子区域统计、不动点与稳定性、Lyapunov 指数、PCA 与对齐、类流形方差指标、流场。
所有函数对只读参数和轨迹是纯函数。
"""
import logging
from collections import Counter, defaultdict
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import settings
from models.errors import (
    DimensionMismatchError,
    InvalidConfigurationError,
    InvalidInputError,
    UndefinedMeanError,
)
from models.params import Bitcode, ModelParams, Trajectory
from models.reports import (
    AlignmentResult,
    BitcodeDistribution,
    ClassBitcodeProfile,
    FixedPointReport,
    FlowField,
    FlowPlane,
    GatingProfile,
    LyapunovResult,
    PCAResult,
    ScanSubregionProfile,
    SeparationResult,
    Stability,
    SubregionStatistics,
    VarianceMetrics,
)
from services.dynamics import (
    autonomous_rollout,
    bitcode_values,
    jacobian_at,
    step,
    step_batch,
    unit_mask,
)

logger = logging.getLogger(__name__)

StateSeq = Union[Trajectory, np.ndarray]


def _states_of(trajectory: StateSeq) -> np.ndarray:
    states = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory, dtype=np.float64)
    if states.ndim != 2:
        raise InvalidInputError(f"trajectory must be (T, M), got shape {states.shape}")
    return states


# ---------------------------------------------------------------------------
# 子区域统计
# ---------------------------------------------------------------------------

def bitcode_distribution(
    trajectories: Sequence[StateSeq],
    P: int,
    window: Optional[Tuple[int, int]] = None,
) -> BitcodeDistribution:
    """
    统计所有轨迹在时间窗口 [start, stop) 内各状态的 bitcode

    window 为 None 时统计整条轨迹
    """
    counts: Counter = Counter()
    for i, trajectory in enumerate(trajectories):
        states = _states_of(trajectory)
        T, M = states.shape
        if P < 0 or P > M:
            raise InvalidConfigurationError(f"P={P} must lie in [0, M={M}]", {"M": M, "P": P})
        start, stop = (0, T) if window is None else window
        if not 0 <= start <= stop <= T:
            raise InvalidInputError(
                f"window [{start}, {stop}) is invalid for trajectory {i} of length {T}",
                {"window": [start, stop], "length": T, "trajectory": i},
            )
        counts.update(bitcode_values(states[start:stop], P))
    return BitcodeDistribution(counts=dict(counts), total=sum(counts.values()), P=P)


def _gini_sorted(values: np.ndarray, n_zeros: int = 0) -> float:
    """
    对升序非负向量（前面另有 n_zeros 个 0）计算 ΣΣ|v_i-v_j| / (2N²μ)

    利用排序后的恒等式 ΣΣ|v_i-v_j| = 2Σ(2i-N-1)v_(i)，无需显式展开零单元
    """
    n = len(values) + n_zeros
    total = float(np.sum(values))
    if n == 0 or total <= 0.0:
        raise UndefinedMeanError("Gini coefficient is undefined for a vector with zero mean", {"n": n})
    ranks = np.arange(n_zeros + 1, n + 1, dtype=np.float64)
    return float(np.sum((2.0 * ranks - n - 1.0) * values)) / (n * total)


def gini(values: Union[BitcodeDistribution, Sequence[float], np.ndarray]) -> float:
    """
    Gini 系数

    对 BitcodeDistribution 在 min(2^P, 样本数) 个单元上计算（未出现的单元计为 0）

    Raises:
        UndefinedMeanError: 向量全为 0
    """
    if isinstance(values, BitcodeDistribution):
        observed = np.sort(np.array(list(values.counts.values()), dtype=np.float64))
        support = min(1 << values.P, values.total)
        return _gini_sorted(observed, max(0, support - len(observed)))
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size and np.any(v < 0):
        raise InvalidInputError("Gini coefficient needs non-negative values")
    return _gini_sorted(np.sort(v))


def effective_regions(dist: BitcodeDistribution) -> Tuple[int, List[float]]:
    """出现过的 bitcode 数，以及按概率降序排列的累积质量曲线"""
    probs = dist.sorted_probabilities()
    return len(probs), [float(c) for c in np.cumsum(probs)]


def subregion_statistics(dist: BitcodeDistribution) -> SubregionStatistics:
    """子区域占用统计：有效区域数、理论上限、累积质量及两种 Gini"""
    n_effective, cumulative = effective_regions(dist)
    theoretical_max = min(1 << dist.P, dist.total)
    if dist.total == 0:
        return SubregionStatistics(n_effective=0, theoretical_max=0, cumulative_mass=[])
    observed = np.sort(np.array(list(dist.counts.values()), dtype=np.float64))
    return SubregionStatistics(
        n_effective=n_effective,
        theoretical_max=theoretical_max,
        cumulative_mass=cumulative,
        gini_full=gini(dist),
        gini_observed=_gini_sorted(observed),
    )


# ---------------------------------------------------------------------------
# 不动点与稳定性
# ---------------------------------------------------------------------------

def _check_bitcode(params: ModelParams, bitcode: Bitcode) -> None:
    if bitcode.P != params.P:
        raise DimensionMismatchError(
            f"bitcode has {bitcode.P} bits but the model has P={params.P}",
            {"bitcode_bits": bitcode.P, "P": params.P},
        )


def jacobian(params: ModelParams, bitcode: Bitcode) -> np.ndarray:
    """子区域雅可比 J = diag(A) + W_masked；W 中未激活 ReLU 单元对应的列置 0"""
    _check_bitcode(params, bitcode)
    mask = unit_mask(bitcode.bits, params.M)
    return np.diag(params.A_diag) + params.W * mask[None, :]


def classify_stability(eigenvalues: np.ndarray, tolerance: Optional[float] = None) -> Stability:
    """谱半径距 1 在 tolerance 以内记为临界"""
    tolerance = settings.marginal_tolerance if tolerance is None else tolerance
    radius = float(np.max(np.abs(eigenvalues))) if len(eigenvalues) else 0.0
    if abs(radius - 1.0) <= tolerance:
        return Stability.MARGINAL
    return Stability.STABLE if radius < 1.0 else Stability.UNSTABLE


def fixed_point(params: ModelParams, bitcode: Bitcode) -> FixedPointReport:
    """
    求解子区域线性系统 (J - I) z* = -h

    矩阵奇异（或残差超出容限）时不报告不动点；z* 自身的 bitcode 与定义子区域不同则标记为 virtual
    """
    J = jacobian(params, bitcode)
    eigenvalues = np.linalg.eigvals(J)
    stability = classify_stability(eigenvalues)
    report = dict(
        bitcode=bitcode,
        eigenvalues_real=[float(v) for v in eigenvalues.real],
        eigenvalues_imag=[float(v) for v in eigenvalues.imag],
        spectral_radius=float(np.max(np.abs(eigenvalues))),
        stability=stability,
        stable=stability == Stability.STABLE,
    )
    system = J - np.eye(params.M)
    try:
        z_star = np.linalg.solve(system, -params.h)
    except np.linalg.LinAlgError:
        logger.warning(f"Subregion {bitcode} has a singular system, no fixed point")
        return FixedPointReport(**report)
    residual = float(np.max(np.abs(system @ z_star + params.h)))
    if not np.all(np.isfinite(z_star)) or residual >= settings.fixed_point_residual_tol:
        logger.warning(f"Subregion {bitcode} is numerically singular (residual {residual:.3e}), no fixed point")
        return FixedPointReport(**report)
    own = bitcode_values(z_star[None, :], params.P)[0]
    return FixedPointReport(
        **report,
        z_star=[float(v) for v in z_star],
        virtual=own != bitcode.value,
        residual=residual,
    )


def all_fixed_points(params: ModelParams, max_bits: Optional[int] = None) -> List[FixedPointReport]:
    """枚举全部 2^P 个子区域的不动点报告"""
    max_bits = settings.max_fixed_point_bits if max_bits is None else max_bits
    if params.P > max_bits:
        raise InvalidConfigurationError(
            f"refusing to enumerate 2^{params.P} subregions (max_fixed_point_bits={max_bits})",
            {"P": params.P, "max_fixed_point_bits": max_bits},
        )
    return [fixed_point(params, Bitcode.from_value(v, params.P)) for v in range(1 << params.P)]


# ---------------------------------------------------------------------------
# Lyapunov 指数与周期检测
# ---------------------------------------------------------------------------

def _check_horizon(n_steps: int, discard: int, reorth_interval: int) -> None:
    if n_steps <= discard:
        raise InvalidConfigurationError(
            f"n_steps={n_steps} must exceed discard={discard}", {"n_steps": n_steps, "discard": discard}
        )
    if reorth_interval < 1:
        raise InvalidConfigurationError(f"reorth_interval must be positive, got {reorth_interval}")


def _qr_spectrum(
    params: ModelParams, z_init: np.ndarray, states: np.ndarray, discard: int, reorth_interval: int
) -> np.ndarray:
    """沿已有的自由演化轨迹累积雅可比乘积；states[t] 为第 t+1 步的状态"""
    n_steps = states.shape[0]
    previous = np.vstack([z_init[None, :], states[:-1]])
    Q = np.eye(params.M)
    sums = np.zeros(params.M)
    pending = 0
    with np.errstate(divide="ignore"):
        for t in range(discard, n_steps):
            Q = jacobian_at(params, previous[t]) @ Q
            pending += 1
            if pending == reorth_interval or t == n_steps - 1:
                Q, R = np.linalg.qr(Q)
                sums += np.log(np.abs(np.diag(R)))
                pending = 0
    return np.sort(sums / (n_steps - discard))[::-1]


def lyapunov_spectrum(
    params: ModelParams,
    z0: Optional[Sequence[float]] = None,
    n_steps: Optional[int] = None,
    discard: Optional[int] = None,
    reorth_interval: int = 1,
) -> np.ndarray:
    """
    QR 法估计完整 Lyapunov 谱（降序）

    零输入自由演化 n_steps 步，丢弃前 discard 步后累积雅可比乘积，
    每 reorth_interval 步做一次 QR 重正交化并累加 log|R_ii|

    Raises:
        TrajectoryDivergedError: 轨迹出现非有限值
    """
    n_steps = settings.lyapunov_steps if n_steps is None else n_steps
    discard = settings.lyapunov_discard if discard is None else discard
    _check_horizon(n_steps, discard, reorth_interval)
    z_init = np.zeros(params.M) if z0 is None else np.asarray(z0, dtype=np.float64)
    states = autonomous_rollout(params, z_init, n_steps)
    return _qr_spectrum(params, z_init, states, discard, reorth_interval)


def max_lyapunov(
    params: ModelParams,
    z0: Optional[Sequence[float]] = None,
    n_steps: Optional[int] = None,
    discard: Optional[int] = None,
    reorth_interval: int = 1,
) -> float:
    """最大 Lyapunov 指数"""
    return float(lyapunov_spectrum(params, z0, n_steps, discard, reorth_interval)[0])


def detect_cycle_period(
    trajectory: StateSeq,
    tol: float = 1e-6,
    max_period: Optional[int] = None,
) -> Optional[int]:
    """
    检测轨迹末端的最小周期 k：最后 k 个状态均满足 ‖z_t - z_{t-k}‖ < tol

    找不到时返回 None
    """
    states = _states_of(trajectory)
    T = states.shape[0]
    max_period = T // 2 if max_period is None else min(max_period, T // 2)
    for k in range(1, max_period + 1):
        tail = states[T - k:]
        lagged = states[T - 2 * k:T - k]
        if np.all(np.linalg.norm(tail - lagged, axis=1) < tol):
            return k
    return None


def lyapunov_report(params: ModelParams, z0: Optional[Sequence[float]] = None) -> LyapunovResult:
    """Lyapunov 谱及末端周期，供分析报告使用；两者共用同一条自由演化轨迹"""
    n_steps, discard = settings.lyapunov_steps, settings.lyapunov_discard
    _check_horizon(n_steps, discard, 1)
    z_init = np.zeros(params.M) if z0 is None else np.asarray(z0, dtype=np.float64)
    states = autonomous_rollout(params, z_init, n_steps)
    spectrum = _qr_spectrum(params, z_init, states, discard, 1)
    tail = states[discard:]
    return LyapunovResult(
        max_exponent=float(spectrum[0]),
        spectrum=[float(v) for v in spectrum],
        n_steps=n_steps,
        discard=discard,
        cycle_period=detect_cycle_period(tail, tol=1e-6 * max(1.0, float(np.max(np.abs(tail))))),
    )


# ---------------------------------------------------------------------------
# PCA 与对齐
# ---------------------------------------------------------------------------

def pca(states: np.ndarray, n_components: Optional[int] = None) -> PCAResult:
    """
    中心化数据的 SVD

    常数数据的解释方差比定义为 [1, 0, ...]
    """
    X = np.asarray(states, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError(f"PCA needs at least 2 samples of shape (N, M), got {X.shape}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    k = len(S) if n_components is None else min(n_components, len(S))
    variance = S ** 2 / (X.shape[0] - 1)
    total = float(variance.sum())
    if total > 0.0:
        ratio = variance / total
    else:
        ratio = np.zeros_like(variance)
        ratio[0] = 1.0
    return PCAResult(
        mean=mean,
        components=Vt[:k],
        explained_variance=variance[:k],
        explained_variance_ratio=ratio[:k],
        projections=Xc @ Vt[:k].T,
    )


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """|cos ∠(u, v)|"""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(u) * np.linalg.norm(v))
    if norm == 0.0:
        raise UndefinedMeanError("cosine similarity with a zero vector is undefined")
    return abs(float(u @ v)) / norm


def eigvec_pc_alignment(
    params: ModelParams,
    bitcode: Bitcode,
    states: np.ndarray,
    imag_tol: float = 1e-12,
) -> AlignmentResult:
    """子区域雅可比主特征向量与状态 PC1 的余弦相似度；主特征值为复数时只报告模长"""
    eigenvalues, eigenvectors = np.linalg.eig(jacobian(params, bitcode))
    lead = int(np.argmax(np.abs(eigenvalues)))
    value = eigenvalues[lead]
    result = dict(
        leading_eigenvalue_real=float(value.real),
        leading_eigenvalue_imag=float(value.imag),
        leading_modulus=float(abs(value)),
    )
    if abs(value.imag) > imag_tol:
        return AlignmentResult(complex_leading=True, **result)
    pc1 = pca(states, n_components=1).components[0]
    return AlignmentResult(cosine=cosine_similarity(np.real(eigenvectors[:, lead]), pc1), **result)


# ---------------------------------------------------------------------------
# 类流形方差指标
# ---------------------------------------------------------------------------

def metrics_from_variances(variances: Sequence[float]) -> VarianceMetrics:
    """由每类方差 v 计算 CV、Gini、max/min 比与归一化 v 的 Shannon 熵（自然对数）"""
    v = np.asarray(variances, dtype=np.float64)
    g = gini(v)
    mean = float(v.mean())
    v_min = float(v.min())
    p = v / v.sum()
    nz = p[p > 0]
    return VarianceMetrics(
        cv=float(v.std()) / mean,
        gini=g,
        max_min_ratio=float(v.max()) / v_min if v_min > 0 else None,
        entropy=float(-np.sum(nz * np.log(nz))),
        n_classes=len(v),
    )


def variance_metrics(
    final_states: np.ndarray,
    labels: Sequence[object],
    threshold: Optional[float] = None,
) -> VarianceMetrics:
    """
    类流形方差分布

    逐维标准化后投影到累积解释方差 ≥ threshold 的最少主成分上，
    计算每类在该子空间内的总方差；样本少于 2 的类别被剔除
    """
    threshold = settings.pca_variance_threshold if threshold is None else threshold
    X = np.asarray(final_states, dtype=np.float64)
    labels = list(labels)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise DimensionMismatchError(
            f"{len(labels)} labels for states of shape {X.shape}", {"states": list(X.shape), "labels": len(labels)}
        )
    std = X.std(axis=0)
    Xn = (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)
    result = pca(Xn)
    k = result.n_components_for(threshold)
    projected = result.projections[:, :k]

    groups: Dict[str, List[int]] = defaultdict(list)
    for i, label in enumerate(labels):
        groups[str(label)].append(i)
    class_variances: Dict[str, float] = {}
    for label in sorted(groups):
        idx = groups[label]
        if len(idx) < 2:
            logger.warning(f"Class {label} has {len(idx)} sample(s), excluded from variance metrics")
            continue
        class_variances[label] = float(np.sum(projected[idx].var(axis=0)))
    if len(class_variances) < 2:
        raise InvalidInputError(
            f"variance metrics need at least 2 classes with 2+ samples, got {len(class_variances)}",
            {"classes": sorted(groups)},
        )
    metrics = metrics_from_variances(list(class_variances.values()))
    return metrics.model_copy(update={"n_components": k, "class_variances": class_variances})


# ---------------------------------------------------------------------------
# 流场
# ---------------------------------------------------------------------------

def flow_field(params: ModelParams, plane: Optional[FlowPlane] = None) -> FlowField:
    """二维网格上每点的位移 step(z, 0) - z"""
    plane = plane or FlowPlane(grid=settings.flow_grid_points)
    ax, ay = plane.axes
    if ax == ay or not (0 <= ax < params.M and 0 <= ay < params.M):
        raise InvalidConfigurationError(f"invalid plane axes {plane.axes} for M={params.M}", {"axes": list(plane.axes)})
    origin = np.zeros(params.M) if plane.origin is None else np.asarray(plane.origin, dtype=np.float64)
    if origin.shape != (params.M,):
        raise DimensionMismatchError(f"plane origin has shape {origin.shape}, expected ({params.M},)")

    xs = np.linspace(plane.x_range[0], plane.x_range[1], plane.grid)
    ys = np.linspace(plane.y_range[0], plane.y_range[1], plane.grid)
    GX, GY = np.meshgrid(xs, ys)
    Z = np.tile(origin, (GX.size, 1))
    Z[:, ax] = GX.reshape(-1)
    Z[:, ay] = GY.reshape(-1)
    D = (step_batch(params, Z) - Z).reshape(plane.grid, plane.grid, params.M)
    return FlowField(xs=xs, ys=ys, U=D[:, :, ax], V=D[:, :, ay], displacements=D)


def flow_field_at(params: ModelParams, points: np.ndarray) -> np.ndarray:
    """逐点计算位移，供校验网格结果使用"""
    return np.array([step(params, z) - z for z in np.asarray(points, dtype=np.float64)])


# ---------------------------------------------------------------------------
# 子区域分离与任务相关剖面
# ---------------------------------------------------------------------------

def subregion_separation_score(
    groups: Mapping[str, Sequence[StateSeq]],
    t_query: int,
    P: int,
    correct: Optional[Mapping[str, Sequence[bool]]] = None,
) -> SeparationResult:
    """
    t_query 时刻 bitcode 只出现在本条件组内的试次比例

    给定逐试次正确与否时，同时报告“是否独占”与正确率的 Pearson 相关（任一方为常数时为 None）
    """
    codes: Dict[str, List[int]] = {}
    for name, trajectories in groups.items():
        queried = []
        for trajectory in trajectories:
            states = _states_of(trajectory)
            if not 0 <= t_query < states.shape[0]:
                raise InvalidInputError(f"t_query={t_query} outside trajectory of length {states.shape[0]}")
            queried.append(states[t_query])
        codes[name] = bitcode_values(np.array(queried), P) if queried else []

    exclusive: Dict[str, List[bool]] = {}
    for name, own in codes.items():
        others = set().union(*(set(c) for other, c in codes.items() if other != name))
        exclusive[name] = [code not in others for code in own]
    flags = [f for name in codes for f in exclusive[name]]
    score = float(np.mean(flags)) if flags else 0.0

    correlation = None
    if correct is not None:
        outcome = np.array([bool(c) for name in codes for c in correct[name]], dtype=np.float64)
        if len(outcome) != len(flags):
            raise DimensionMismatchError(f"{len(outcome)} outcomes for {len(flags)} trials")
        x = np.array(flags, dtype=np.float64)
        if x.std() > 0 and outcome.std() > 0:
            correlation = float(np.corrcoef(x, outcome)[0, 1])
    return SeparationResult(score=score, exclusive=exclusive, correlation_with_accuracy=correlation)


def class_bitcode_profile(final_states: np.ndarray, labels: Sequence[object], P: int) -> ClassBitcodeProfile:
    """每类各 PWL 单元为正的概率，以及类内样本到多数模式的平均 Hamming 距离"""
    X = np.asarray(final_states, dtype=np.float64)
    bits = X[:, X.shape[1] - P:] > 0.0 if P else np.zeros((X.shape[0], 0), dtype=bool)
    groups: Dict[str, List[int]] = defaultdict(list)
    for i, label in enumerate(labels):
        groups[str(label)].append(i)
    activation: Dict[str, List[float]] = {}
    deviation: Dict[str, float] = {}
    weighted = 0.0
    for label in sorted(groups):
        member_bits = bits[groups[label]]
        prob = member_bits.mean(axis=0)
        majority = prob > 0.5
        activation[label] = [float(p) for p in prob]
        deviation[label] = float(np.mean(np.sum(member_bits != majority, axis=1)))
        weighted += deviation[label] * len(groups[label])
    return ClassBitcodeProfile(
        activation_probability=activation,
        within_class_deviation=deviation,
        mean_deviation=weighted / len(X) if len(X) else 0.0,
    )


def gating_subregion_profile(
    trajectories: Sequence[StateSeq],
    marked_positions: Sequence[Sequence[int]],
    P: int,
) -> GatingProfile:
    """每个 bitcode 的访问中落在标记时刻（门控）与积分时刻的比例"""
    if len(trajectories) != len(marked_positions):
        raise DimensionMismatchError(f"{len(marked_positions)} marker lists for {len(trajectories)} trajectories")
    visits: Counter = Counter()
    marked: Counter = Counter()
    for trajectory, positions in zip(trajectories, marked_positions):
        values = bitcode_values(_states_of(trajectory), P)
        visits.update(values)
        marked.update(values[t] for t in positions)
    fraction = {code: marked[code] / n for code, n in sorted(visits.items())}
    return GatingProfile(
        visits=dict(sorted(visits.items())),
        marked_fraction=fraction,
        gating_codes=[code for code, f in fraction.items() if f > 0.5],
        integration_codes=[code for code, f in fraction.items() if f <= 0.5],
    )


def scan_subregion_profile(
    initial_states: np.ndarray,
    commands: Sequence[str],
    action_lengths: Sequence[int],
    P: int,
) -> ScanSubregionProfile:
    """解码器初态的 bitcode 分布，每个子区域内的平均动作长度与 and/after 出现频率"""
    X = np.asarray(initial_states, dtype=np.float64)
    if not len(X) == len(commands) == len(action_lengths):
        raise DimensionMismatchError(
            f"{len(X)} states, {len(commands)} commands and {len(action_lengths)} lengths must agree"
        )
    values = bitcode_values(X, P)
    members: Dict[int, List[int]] = defaultdict(list)
    for i, code in enumerate(values):
        members[code].append(i)
    mean_length, and_fraction, after_fraction = {}, {}, {}
    for code in sorted(members):
        idx = members[code]
        words = [commands[i].split() for i in idx]
        mean_length[code] = float(np.mean([action_lengths[i] for i in idx]))
        and_fraction[code] = float(np.mean(["and" in w for w in words]))
        after_fraction[code] = float(np.mean(["after" in w for w in words]))
    return ScanSubregionProfile(
        distribution=BitcodeDistribution(counts=dict(Counter(values)), total=len(values), P=P),
        mean_action_length=mean_length,
        and_fraction=and_fraction,
        after_fraction=after_fraction,
    )
