"""
BPTT 梯度与 MAR 正则测试
"""
import numpy as np
import pytest

from models.tasks import LossKind, LossSpec, TaskInstance
from services.scan_service import scan_instance
from services.training_service import (
    EncoderDecoderLearner,
    bptt_gradients,
    init_params,
    mar_gradients,
    mar_loss,
)

EPS = 1e-6


def _instances(rng, kind: LossKind, T: int, K: int, O: int, n: int = 3):
    out = []
    for _ in range(n):
        inputs = rng.normal(size=(T, K))
        if kind == LossKind.WINDOW_CROSS_ENTROPY:
            target = [int(v) for v in rng.integers(0, O, size=3)]
            out.append(TaskInstance(inputs=inputs, target=target, loss_window=(T - 3, T)))
        elif kind == LossKind.FINAL_CROSS_ENTROPY:
            out.append(TaskInstance(inputs=inputs, target=int(rng.integers(0, O)), loss_window=(T - 1, T)))
        else:
            out.append(TaskInstance(inputs=inputs, target=float(rng.normal()), loss_window=(T - 1, T)))
    window = (T - 3, T) if kind == LossKind.WINDOW_CROSS_ENTROPY else None
    return out, LossSpec(kind=kind, window=window)


def _numeric_gradients(params, readout, batch, loss, tau, m_reg):
    """对每个参数元素做中心差分"""
    numeric = {}
    for name in ("A_diag", "W", "C", "h"):
        base = np.array(getattr(params, name))
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += EPS
            minus[idx] -= EPS
            lp = bptt_gradients(params.with_arrays(**{name: plus}), readout, batch, loss, tau, m_reg).loss
            lm = bptt_gradients(params.with_arrays(**{name: minus}), readout, batch, loss, tau, m_reg).loss
            grad[idx] = (lp - lm) / (2 * EPS)
        numeric[name] = grad
    for name in ("D", "bias"):
        base = np.array(getattr(readout, name))
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += EPS
            minus[idx] -= EPS
            fields = {"D": readout.D, "bias": readout.bias}
            lp = bptt_gradients(params, type(readout)(**{**fields, name: plus}), batch, loss, tau, m_reg).loss
            lm = bptt_gradients(params, type(readout)(**{**fields, name: minus}), batch, loss, tau, m_reg).loss
            grad[idx] = (lp - lm) / (2 * EPS)
        numeric[name] = grad
    return numeric


@pytest.mark.parametrize("kind", list(LossKind))
@pytest.mark.parametrize("P_choice", ["zero", "one", "all"])
def test_bptt_matches_finite_differences(kind, P_choice, make_params, make_readout, rng):
    """解析梯度与中心差分一致（三种损失，P ∈ {0, 1, M}）"""
    M, K, T = 4, 2, 7
    P = {"zero": 0, "one": 1, "all": M}[P_choice]
    O = 1 if kind == LossKind.FINAL_SQUARED_ERROR else 3
    params = make_params(M=M, P=P, K=K)
    readout = make_readout(O, M)
    batch, loss = _instances(rng, kind, T, K, O)
    result = bptt_gradients(params, readout, batch, loss, tau=0.1, m_reg=M // 2)
    numeric = _numeric_gradients(params, readout, batch, loss, 0.1, M // 2)
    for name, grad in numeric.items():
        np.testing.assert_allclose(result.gradients[name], grad, rtol=1e-5, atol=1e-7, err_msg=name)


def test_linear_a_gradient_is_zero(make_params, make_readout, rng):
    """A 线性部分的梯度恒为 0"""
    params = make_params(M=5, P=2, K=2)
    batch, loss = _instances(rng, LossKind.FINAL_CROSS_ENTROPY, 6, 2, 2)
    result = bptt_gradients(params, make_readout(2, 5), batch, loss, tau=0.5, m_reg=5)
    np.testing.assert_array_equal(result.gradients["A_diag"][:3], 0.0)


def test_empty_loss_window_gives_pure_mar_gradient(make_params, make_readout, rng):
    """损失窗口为空时梯度只剩 MAR 的解析梯度"""
    params = make_params(M=4, P=2, K=2)
    batch = [TaskInstance(inputs=rng.normal(size=(5, 2)), target=[], loss_window=(0, 0))]
    loss = LossSpec(kind=LossKind.WINDOW_CROSS_ENTROPY, window=(0, 0))
    result = bptt_gradients(params, make_readout(3, 4), batch, loss, tau=0.3, m_reg=2)
    expected = mar_gradients(params, 2, 0.3)
    assert result.task_loss == 0.0
    assert result.loss == pytest.approx(mar_loss(params, 2, 0.3))
    for name in ("A_diag", "W", "h"):
        np.testing.assert_allclose(result.gradients[name], expected[name])
    np.testing.assert_array_equal(result.gradients["C"], 0.0)


def test_mar_loss_hand_value():
    """单个线性单元：τ·((W_00-1)² + W_01² + h_0²)"""
    params, _ = init_params(2, 0, 1, 1, seed=0)
    params = params.with_arrays(W=np.array([[0.5, 2.0], [3.0, 4.0]]), h=np.array([1.0, 9.0]))
    assert mar_loss(params, 1, 0.1) == pytest.approx(0.1 * (0.25 + 4.0 + 1.0))
    assert mar_loss(params, 1, 0.0) == 0.0


def test_mar_uses_a_plus_w_for_nonlinear_units():
    """非线性单元的自连接为 A_ii + W_ii"""
    params, _ = init_params(1, 1, 1, 1, seed=0)
    params = params.with_arrays(A_diag=np.array([0.3]), W=np.array([[0.7]]), h=np.array([0.0]))
    assert mar_loss(params, 1, 1.0) == pytest.approx(0.0)


def test_init_params_statistics():
    """初始化：A 线性部分为 0，读出偏置为 0，同一种子结果一致"""
    params, readout = init_params(50, 10, 3, 2, seed=7)
    again, _ = init_params(50, 10, 3, 2, seed=7)
    np.testing.assert_array_equal(params.A_diag[:40], 0.0)
    np.testing.assert_array_equal(readout.bias, 0.0)
    assert params.allclose(again)
    assert np.std(params.W) == pytest.approx(0.01, rel=0.1)


def test_init_params_weight_mean():
    """10^5 个 W 元素的样本均值在 3 倍标准误以内"""
    params, _ = init_params(317, 1, 1, 1, seed=0)
    assert params.W.size >= 100_000
    assert abs(np.mean(params.W)) <= 3 * 0.01 / np.sqrt(params.W.size)


def test_encoder_decoder_gradients_match_finite_differences(make_params, make_readout):
    """编码器-解码器：梯度经解码器初态回传到编码器"""
    encoder = make_params(M=3, P=1, K=13)
    decoder = make_params(M=3, P=1, K=1)
    readout = make_readout(7, 3)
    learner = EncoderDecoderLearner(encoder, decoder, readout, tau=0.1, m_reg=1, decode_cap=16)
    batch = [
        scan_instance("jump twice", ["JUMP", "JUMP"]),
        scan_instance("walk left", ["LTURN", "WALK"]),
        scan_instance("look", ["LOOK"]),
    ]
    analytic = learner.loss_and_gradients(batch).gradients
    for name, array in learner.arrays.items():
        numeric = np.zeros_like(array)
        for idx in np.ndindex(array.shape):
            original = array[idx]
            array[idx] = original + EPS
            lp = learner.loss_and_gradients(batch).loss
            array[idx] = original - EPS
            lm = learner.loss_and_gradients(batch).loss
            array[idx] = original
            numeric[idx] = (lp - lm) / (2 * EPS)
        np.testing.assert_allclose(analytic[name], numeric, rtol=1e-5, atol=1e-7, err_msg=name)
