"""
验收测试

快速部分为性质检查（梯度、Lyapunov、不动点、确定性）；
标记为 slow 的部分复现基准任务上的结论，需要数十分钟到数小时
"""
import statistics

import numpy as np
import pytest

from models.params import Bitcode, ModelParams, Readout
from models.reports import Stability
from models.tasks import LossKind, LossSpec, TaskInstance
from services.analysis_report_service import collect_states, default_window
from services.analysis_service import (
    all_fixed_points,
    bitcode_distribution,
    lyapunov_spectrum,
    max_lyapunov,
    subregion_statistics,
)
from services.checkpoint_service import checkpoint_service
from services.dynamics import bitcode_of, jacobian_at, step
from services.experiment_service import experiment_service
from services.training_service import bptt_gradients

EPS = 1e-6


# ---------------------------------------------------------------------------
# 梯度
# ---------------------------------------------------------------------------

def _random_problem(rng, kind):
    M = int(rng.integers(2, 7))
    P = [0, 1, M][int(rng.integers(0, 3))]
    K = int(rng.integers(1, 4))
    T = int(rng.integers(3, 13))
    O = 1 if kind == LossKind.FINAL_SQUARED_ERROR else 3
    params = ModelParams(
        M=M, P=P, K=K,
        A_diag=rng.uniform(-0.5, 0.9, size=M), W=rng.normal(0, 0.4, size=(M, M)),
        C=rng.normal(size=(M, K)), h=rng.normal(0, 0.5, size=M),
    )
    readout = Readout(D=rng.normal(size=(O, M)), bias=rng.normal(0, 0.1, size=O))
    batch = []
    for _ in range(2):
        inputs = rng.normal(size=(T, K))
        if kind == LossKind.WINDOW_CROSS_ENTROPY:
            batch.append(TaskInstance(inputs=inputs, target=[int(v) for v in rng.integers(0, O, 2)], loss_window=(T - 2, T)))
        elif kind == LossKind.FINAL_CROSS_ENTROPY:
            batch.append(TaskInstance(inputs=inputs, target=int(rng.integers(0, O)), loss_window=(T - 1, T)))
        else:
            batch.append(TaskInstance(inputs=inputs, target=float(rng.normal()), loss_window=(T - 1, T)))
    loss = LossSpec(kind=kind, window=(T - 2, T) if kind == LossKind.WINDOW_CROSS_ENTROPY else None)
    return params, readout, batch, loss


@pytest.mark.parametrize("case", range(20))
def test_gradient_oracle_on_random_configurations(case):
    """随机 (M ≤ 6, P ∈ {0, 1, M}, T ≤ 12) 上 BPTT 与中心差分一致"""
    rng = np.random.default_rng(1000 + case)
    kind = list(LossKind)[case % 3]
    params, readout, batch, loss = _random_problem(rng, kind)
    result = bptt_gradients(params, readout, batch, loss, tau=0.1, m_reg=params.M // 2)
    for name in ("A_diag", "W", "C", "h"):
        base = np.array(getattr(params, name))
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += EPS
            minus[idx] -= EPS
            lp = bptt_gradients(params.with_arrays(**{name: plus}), readout, batch, loss, 0.1, params.M // 2).loss
            lm = bptt_gradients(params.with_arrays(**{name: minus}), readout, batch, loss, 0.1, params.M // 2).loss
            numeric[idx] = (lp - lm) / (2 * EPS)
        np.testing.assert_allclose(result.gradients[name], numeric, rtol=1e-5, atol=1e-7, err_msg=name)


# ---------------------------------------------------------------------------
# Lyapunov
# ---------------------------------------------------------------------------

def _normal_matrix(rng, M, rho):
    """谱半径为 rho 的正规矩阵，含一对复共轭特征值"""
    blocks = np.zeros((M, M))
    theta = rng.uniform(0.1, 3.0)
    blocks[:2, :2] = rho * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    for i in range(2, M):
        blocks[i, i] = rng.uniform(-rho, rho) * 0.9
    Q, _ = np.linalg.qr(rng.normal(size=(M, M)))
    return Q @ blocks @ Q.T


@pytest.mark.parametrize("case", range(20))
def test_lyapunov_oracle_linear_models(case):
    """P=0 线性模型：最大指数 = ln ρ(W)"""
    rng = np.random.default_rng(2000 + case)
    M = int(rng.integers(2, 6))
    rho = rng.uniform(0.5, 1.05)
    W = _normal_matrix(rng, M, rho)
    params = ModelParams(M=M, P=0, K=1, A_diag=np.zeros(M), W=W, C=np.zeros((M, 1)), h=np.zeros(M))
    assert max_lyapunov(params) == pytest.approx(np.log(rho), abs=1e-3)


def test_lyapunov_bounded_by_direct_product(make_params):
    """随机 PWL 模型：QR 估计落在直接矩阵乘积给出的上下界之间"""
    params = make_params(M=3, P=2, K=1)
    n = 200
    z = np.zeros(3)
    product = np.eye(3)
    log_volume = 0.0
    for _ in range(n):
        J = jacobian_at(params, z)
        product = J @ product
        log_volume += np.linalg.slogdet(J)[1]
        z = step(params, z)
    spectrum = lyapunov_spectrum(params, n_steps=n, discard=0)
    lower = np.log(np.linalg.norm(product[:, 0])) / n
    upper = np.log(np.linalg.norm(product, 2)) / n
    assert lower - 1e-9 <= spectrum[0] <= upper + 1e-9
    assert spectrum.sum() == pytest.approx(log_volume / n, abs=1e-2)


# ---------------------------------------------------------------------------
# 不动点
# ---------------------------------------------------------------------------

def test_fixed_point_residuals_and_stability_by_simulation():
    """真实不动点残差 < 1e-8；稳定性标签与 100 步扰动模拟一致"""
    checked = 0
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)
        M, P = 4, 2
        params = ModelParams(
            M=M, P=P, K=1,
            A_diag=rng.uniform(-0.5, 0.9, size=M), W=rng.normal(0, 0.6, size=(M, M)),
            C=np.zeros((M, 1)), h=rng.normal(size=M),
        )
        for report in all_fixed_points(params):
            if report.z_star is None:
                continue
            assert report.residual < 1e-8
            z_star = np.array(report.z_star)
            if report.virtual or np.min(np.abs(z_star[M - P:])) < 1e-3:
                continue
            assert bitcode_of(z_star, P) == report.bitcode
            z = z_star + 1e-8 * rng.normal(size=M)
            start = np.linalg.norm(z - z_star)
            for _ in range(100):
                z = step(params, z)
            distance = np.linalg.norm(z - z_star)
            if report.stability == Stability.STABLE and report.spectral_radius < 0.9:
                assert distance < start
                checked += 1
            elif report.spectral_radius > 1.5:
                assert distance > start
                checked += 1
    assert checked > 0


def test_two_bit_model_reports_at_most_four_subregions(make_params):
    reports = all_fixed_points(make_params(M=5, P=2, K=1))
    assert len(reports) == 4
    assert {r.bitcode for r in reports} == {Bitcode.from_value(v, 2) for v in range(4)}


# ---------------------------------------------------------------------------
# 确定性
# ---------------------------------------------------------------------------

def test_runs_are_byte_identical(tiny_copy_config, tmp_path):
    """同一配置两次运行：检查点、日志与汇总逐字节一致"""
    config = experiment_service.parse_config(tiny_copy_config.read_text(encoding="utf-8"))
    experiment_service.run_experiment(config, out=tmp_path / "first", jobs=1)
    experiment_service.run_experiment(config, out=tmp_path / "second", jobs=1)
    first = sorted(p.relative_to(tmp_path / "first") for p in (tmp_path / "first").rglob("*") if p.is_file())
    second = sorted(p.relative_to(tmp_path / "second") for p in (tmp_path / "second").rglob("*") if p.is_file())
    assert first == second
    for rel in first:
        assert (tmp_path / "first" / rel).read_bytes() == (tmp_path / "second" / rel).read_bytes(), rel


# ---------------------------------------------------------------------------
# 基准复现（slow）
# ---------------------------------------------------------------------------

def _best(results, lower_is_better=False):
    values = [r.test_metric for r in results]
    return min(values) if lower_is_better else max(values)


@pytest.mark.slow
def test_addition_problem_needs_one_relu(tmp_path):
    """T=100 加法：P=1 的最优 MSE 比 P=0 至少低 10 倍"""
    config = experiment_service.parse_config(
        """
[task]
name = "addition"
[task.params]
T = 100
n_train = 2000
n_test = 200
[model]
M = 30
P = [0, 1]
[train]
epochs = 200
[experiment]
name = "addition"
seeds = [0, 1, 2, 3, 4]
"""
    )
    results = experiment_service.run_experiment(config, out=tmp_path, jobs=5)
    linear = _best([r for r in results if r.cell.P == 0], lower_is_better=True)
    relu = _best([r for r in results if r.cell.P == 1], lower_is_better=True)
    assert relu < 0.01
    assert linear > 0.05
    assert relu * 10 <= linear


@pytest.mark.slow
def test_contextual_task_needs_multistability(tmp_path):
    """线性模型停在 50% 左右；M=2、P=1 可以超过 90%"""
    config = experiment_service.parse_config(
        """
[task]
name = "contextual"
[model]
M = [2, 10, 30]
P = [0, 1]
[train]
epochs = 200
[experiment]
name = "contextual"
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
"""
    )
    results = experiment_service.run_experiment(config, out=tmp_path, jobs=8)
    for M in (2, 10, 30):
        linear = [r.test_metric for r in results if r.cell.P == 0 and r.cell.M == M]
        assert all(abs(v - 0.5) <= 0.05 for v in linear), (M, linear)
    assert _best([r for r in results if r.cell.P == 1 and r.cell.M == 2]) >= 0.9


@pytest.mark.slow
def test_copy_task_mar_does_not_hurt(tmp_path):
    """复制任务：τ=0.1 的中位正确率不低于 τ=0"""
    config = experiment_service.parse_config(
        """
[task]
name = "copy"
[task.params]
n_sym = 4
n_seq = 8
delay = 200
[model]
M = 30
P = 1
[train]
tau = [0.0, 0.1]
[experiment]
name = "copy_mar"
seeds = [0, 1, 2, 3, 4]
"""
    )
    results = experiment_service.run_experiment(config, out=tmp_path, jobs=5)
    without = statistics.median(r.test_metric for r in results if r.cell.tau == 0.0)
    with_mar = statistics.median(r.test_metric for r in results if r.cell.tau == 0.1)
    assert with_mar >= without


COPY_GRID = """
[task]
name = "copy"
[task.params]
n_sym = 4
n_seq = 8
delay = 200
[model]
M = 30
P = {P}
[experiment]
name = "{name}"
seeds = {seeds}
"""


@pytest.mark.slow
def test_copy_task_single_relu_recalls_perfectly(tmp_path):
    """复制任务：P=1 最优达到 100%，P=0 高于机会水平 40%，P=M 严格低于 P=1"""
    config = experiment_service.parse_config(
        COPY_GRID.format(P="[0, 1, 30]", name="copy", seeds=list(range(10)))
    )
    results = experiment_service.run_experiment(config, out=tmp_path, jobs=8)
    linear = _best([r for r in results if r.cell.P == 0])
    single = _best([r for r in results if r.cell.P == 1])
    full = _best([r for r in results if r.cell.P == 30])
    assert single == 1.0
    assert linear > 0.4
    assert full < single


def _recall_statistics(root, result):
    checkpoint = checkpoint_service.load(root / result.checkpoint)
    data = collect_states(checkpoint)
    dist = bitcode_distribution(data.states, checkpoint.P, default_window(data))
    return subregion_statistics(dist)


@pytest.mark.slow
def test_copy_task_bitcodes_concentrate(tmp_path):
    """P=10 复制模型的回忆阶段 ≥90% 质量落在 ≤5% 的 bitcode 上；Gini 随 P 增大"""
    config = experiment_service.parse_config(
        COPY_GRID.format(P="[2, 5, 10]", name="copy_bitcodes", seeds=list(range(5)))
    )
    results = experiment_service.run_experiment(config, out=tmp_path, jobs=5)
    root = tmp_path / "copy_bitcodes"

    accurate = [r for r in results if r.cell.P == 10 and r.test_metric >= 0.95]
    assert accurate, "no P=10 model reached 95% accuracy"
    budget = int(0.05 * 2 ** 10)
    for result in accurate:
        stats = _recall_statistics(root, result)
        assert stats.cumulative_mass[min(budget, len(stats.cumulative_mass)) - 1] >= 0.9

    medians = {
        P: statistics.median(_recall_statistics(root, r).gini_full for r in results if r.cell.P == P)
        for P in (2, 5, 10)
    }
    increasing = [medians[2] < medians[5], medians[5] < medians[10], medians[2] < medians[10]]
    assert sum(increasing) >= 2, medians
