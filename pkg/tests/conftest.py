"""
Pytest 配置和 fixtures
"""
import numpy as np
import pytest

from models.params import ModelParams, Readout


@pytest.fixture
def rng():
    """固定种子的随机数生成器"""
    return np.random.default_rng(1234)


@pytest.fixture
def make_params(rng):
    """按 (M, P, K) 生成随机 AL-RNN 参数的工厂"""

    def _make(M: int = 4, P: int = 2, K: int = 2, scale: float = 0.4) -> ModelParams:
        return ModelParams(
            M=M,
            P=P,
            K=K,
            A_diag=rng.uniform(-0.5, 0.9, size=M),
            W=rng.normal(0.0, scale, size=(M, M)),
            C=rng.normal(0.0, 1.0, size=(M, K)),
            h=rng.normal(0.0, 0.5, size=M),
        )

    return _make


@pytest.fixture
def make_readout(rng):
    """随机读出层工厂"""

    def _make(O: int, M: int) -> Readout:
        return Readout(D=rng.normal(0.0, 1.0, size=(O, M)), bias=rng.normal(0.0, 0.1, size=O))

    return _make


@pytest.fixture
def tiny_copy_config(tmp_path):
    """一个几秒内即可跑完的复制任务实验配置"""
    path = tmp_path / "copy.toml"
    path.write_text(
        """
[task]
name = "copy"

[task.params]
n_sym = 3
n_seq = 2
delay = 3
n_train = 20
n_test = 6

[model]
M = 4
P = [0, 1]

[train]
epochs = 2
batch_size = 8

[experiment]
name = "tiny"
seeds = [0, 1, 2]
""",
        encoding="utf-8",
    )
    return path
