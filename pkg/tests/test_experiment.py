"""
实验配置与网格编排测试
"""
import csv

import pytest

from models.errors import InvalidConfigurationError
from models.experiment import CHECKPOINT_SCHEMA_VERSION, CellResult, GridCell
from services.checkpoint_service import CheckpointService, checkpoint_service
from services.experiment_service import (
    CHECKPOINT_FILE,
    LOG_FILE,
    RESULT_FILE,
    SUMMARY_FILE,
    ExperimentService,
    experiment_service,
)
from services.task_service import generate_dataset
from services.training_service import evaluate


# ---------------------------------------------------------------------------
# 配置解析
# ---------------------------------------------------------------------------

def test_parse_config_defaults():
    config = experiment_service.parse_config('[task]\nname = "addition"\n')
    assert config.model.M == 30
    assert config.train.learning_rate == 0.001
    assert config.experiment.seeds == [0]
    assert len(config.cells()) == 1


def test_grid_expansion_order():
    """按 (P, M, tau, seed) 展开"""
    config = experiment_service.parse_config(
        """
[task]
name = "contextual"
[model]
M = [2, 10]
P = [0, 1]
[train]
tau = [0.0, 0.5]
[experiment]
seeds = [3, 4]
"""
    )
    cells = config.cells()
    assert len(cells) == 16
    assert cells[0] == GridCell(seed=3, P=0, M=2, tau=0.0)
    assert cells[1] == GridCell(seed=4, P=0, M=2, tau=0.0)
    assert cells[-1] == GridCell(seed=4, P=1, M=10, tau=0.5)
    assert cells[0].dirname == "P0_M2_tau0_seed3"
    assert cells[-1].tag == "cell P=1 M=10 tau=0.5 seed=4"


@pytest.mark.parametrize(
    "text, field",
    [
        ('[task]\nname = "sorting"\n', "task.name"),
        ('[task]\nname = "copy"\n[model]\nM = 2\nP = 3\n', "P=3"),
        ('[task]\nname = "copy"\n[train]\nlearning_rate = -1.0\n', "train.learning_rate"),
        ('[task]\nname = "copy"\n[train]\nepochs = 0\n', "train.epochs"),
        ('[task]\nname = "copy"\n[train]\nbogus = 1\n', "train.bogus"),
        ('[task]\nname = "copy"\n[experiment]\nseeds = [1, 1]\n', "experiment.seeds"),
        ('[task]\nname = "copy"\n[model]\nP = -1\n', "model.P"),
    ],
)
def test_invalid_config_names_the_field(text, field):
    """配置错误在消息中指明出错字段"""
    with pytest.raises(InvalidConfigurationError) as exc:
        experiment_service.parse_config(text)
    assert field in exc.value.message


def test_invalid_toml():
    with pytest.raises(InvalidConfigurationError):
        experiment_service.parse_config("[task\n")


def test_load_config_seed_override(tiny_copy_config):
    config = experiment_service.load_config(tiny_copy_config, seed=7)
    assert config.experiment.seeds == [7]
    assert [c.seed for c in config.cells()] == [7, 7]
    with pytest.raises(InvalidConfigurationError):
        experiment_service.load_config(tiny_copy_config.parent / "missing.toml")


def test_task_seed_overrides_cell_seed():
    config = experiment_service.parse_config('[task]\nname = "copy"\nseed = 11\n[experiment]\nseeds = [1, 2]\n')
    assert {config.descriptor(c).seed for c in config.cells()} == {11}
    config = experiment_service.parse_config('[task]\nname = "copy"\n[experiment]\nseeds = [1, 2]\n')
    assert [config.descriptor(c).seed for c in config.cells()] == [1, 2]


def test_train_config_falls_back_to_defaults():
    config = experiment_service.parse_config('[task]\nname = "copy"\n[train]\ntau = [0.0, 0.3]\n')
    cell = config.cells()[1]
    train_config = config.train_config(cell, grad_clip_norm=10.0, early_stop_patience=50)
    assert train_config.tau == 0.3
    assert train_config.grad_clip_norm == 10.0
    assert train_config.early_stop_patience == 50
    assert train_config.seed == cell.seed


# ---------------------------------------------------------------------------
# 汇总
# ---------------------------------------------------------------------------

def _result(P, seed, value, diverged=False):
    cell = GridCell(seed=seed, P=P, M=4, tau=0.1)
    return CellResult(
        cell=cell, metric_name="mse", test_metric=value, diverged=diverged,
        checkpoint=f"{cell.dirname}/{CHECKPOINT_FILE}", checkpoint_sha256="0" * 64,
    )


def test_summarize_groups_seeds():
    """跨种子均值、样本标准差与最优值；越低越好时 best 取最小"""
    results = [_result(0, 0, 1.0), _result(0, 1, 3.0), _result(1, 0, 0.5, diverged=True)]
    rows = experiment_service.summarize(results, higher_is_better=False)
    assert [(r.P, r.n_seeds) for r in rows] == [(0, 2), (1, 1)]
    assert rows[0].mean == pytest.approx(2.0)
    assert rows[0].std == pytest.approx(2 ** 0.5)
    assert rows[0].best == 1.0
    assert rows[1].std == 0.0
    assert rows[1].n_diverged == 1
    lines = experiment_service.summary_csv(rows).splitlines()
    assert lines[0] == "P,M,tau,metric,n_seeds,mean,std,best,n_diverged"
    assert lines[2] == "1,4,0.1,mse,1,0.5,0.0,0.5,1"


# ---------------------------------------------------------------------------
# 端到端网格
# ---------------------------------------------------------------------------

def test_run_experiment_writes_cells_and_summary(tiny_copy_config, tmp_path):
    """3 个种子 × 2 个 P：6 个单元目录，summary 两行，每行 3 个种子"""
    config = experiment_service.load_config(tiny_copy_config)
    results = experiment_service.run_experiment(config, out=tmp_path / "runs", jobs=1)
    root = tmp_path / "runs" / "tiny"
    assert len(results) == 6
    for result in results:
        cell_dir = root / result.cell.dirname
        assert (cell_dir / CHECKPOINT_FILE).is_file()
        assert (cell_dir / LOG_FILE).read_text(encoding="utf-8").startswith("epoch,")
        assert (cell_dir / RESULT_FILE).is_file()
        assert 0.0 <= result.test_metric <= 1.0
        assert not result.diverged
    with open(root / SUMMARY_FILE, encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [row["P"] for row in rows] == ["0", "1"]
    assert all(row["n_seeds"] == "3" for row in rows)
    assert (root / "config.json").is_file()
    assert {r.cell for r in experiment_service.collect_results(root)} == {r.cell for r in results}


def test_summary_metric_equals_reevaluated_checkpoint(tiny_copy_config, tmp_path):
    """result.json 中的测试指标与从检查点重新评估的结果完全一致"""
    config = experiment_service.load_config(tiny_copy_config, seed=0)
    results = experiment_service.run_experiment(config, out=tmp_path, jobs=1)
    for result in results:
        checkpoint = checkpoint_service.load(tmp_path / "tiny" / result.checkpoint)
        value = evaluate(checkpoint_service.trained_model(checkpoint), generate_dataset(checkpoint.task))
        assert value == result.test_metric


def test_training_is_deterministic(tiny_copy_config, tmp_path):
    """同一配置在不同目录下运行得到逐字节一致的检查点"""
    config = experiment_service.load_config(tiny_copy_config, seed=1)
    first = experiment_service.run_experiment(config, out=tmp_path / "a", jobs=1)
    second = experiment_service.run_experiment(config, out=tmp_path / "b", jobs=1)
    assert [r.checkpoint_sha256 for r in first] == [r.checkpoint_sha256 for r in second]
    for r in first:
        a = (tmp_path / "a" / "tiny" / r.checkpoint).read_bytes()
        b = (tmp_path / "b" / "tiny" / r.checkpoint).read_bytes()
        assert a == b


def test_rerun_skips_completed_cells(tiny_copy_config, tmp_path):
    """结果与检查点哈希一致的单元不再重新训练；检查点被改动时重跑"""
    config = experiment_service.load_config(tiny_copy_config, seed=2)
    first = experiment_service.run_experiment(config, out=tmp_path, jobs=1)
    checkpoint = tmp_path / "tiny" / first[0].checkpoint
    stamp = checkpoint.stat().st_mtime_ns
    second = experiment_service.run_experiment(config, out=tmp_path, jobs=1)
    assert checkpoint.stat().st_mtime_ns == stamp
    assert [r.test_metric for r in first] == [r.test_metric for r in second]

    checkpoint.write_text(checkpoint.read_text(encoding="utf-8") + " ", encoding="utf-8")
    third = experiment_service.run_experiment(config, out=tmp_path, jobs=1)
    assert third[0].checkpoint_sha256 == first[0].checkpoint_sha256


def test_service_instance_uses_its_own_defaults(tiny_copy_config, tmp_path):
    """未指定 out/jobs 时使用实例的输出目录与并行度"""
    service = ExperimentService(output_dir=str(tmp_path / "custom"), jobs=1)
    config = service.load_config(tiny_copy_config, seed=0)
    results = service.run_experiment(config)
    root = tmp_path / "custom" / "tiny"
    assert (root / SUMMARY_FILE).exists()
    for result in results:
        assert (root / result.checkpoint).exists()


def test_global_service_singletons():
    assert isinstance(experiment_service, ExperimentService)
    assert isinstance(checkpoint_service, CheckpointService)
    assert checkpoint_service.schema_version == CHECKPOINT_SCHEMA_VERSION
