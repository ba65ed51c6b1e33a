"""
命令行测试
"""
import json

import pytest

from app.main import EXIT_OK, EXIT_USAGE, main
from models.experiment import CellResult
from services.analysis_report_service import REPORT_FILE, SCHEMA_FILE
from services.experiment_service import RESULT_FILE, SUMMARY_FILE


@pytest.fixture
def trained_run(tiny_copy_config, tmp_path):
    """用 tiny 配置训练一个种子，返回实验目录"""
    out = tmp_path / "runs"
    assert main(["train", "--config", str(tiny_copy_config), "--seed", "0", "--out", str(out)]) == EXIT_OK
    return out / "tiny"


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["train"],
        ["eval", "--checkpoint"],
        ["scan-data", "--out", "x", "--split-fraction", "half"],
        ["eval", "--checkpoint", "c.json", "--split", "validation"],
    ],
)
def test_usage_errors_exit_with_one(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "usage_error" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.toml")]) == 1
    assert "INVALID_CONFIGURATION" in capsys.readouterr().err


def test_invalid_config_reports_field(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('[task]\nname = "copy"\n[train]\nepochs = -3\n', encoding="utf-8")
    assert main(["train", "--config", str(path)]) == 1
    assert "train.epochs" in capsys.readouterr().err


def test_scan_data_writes_corpus_and_split(tmp_path):
    out = tmp_path / "scan"
    assert main(["scan-data", "--out", str(out), "--no-export"]) == EXIT_OK
    corpus = (out / "scan_corpus.txt").read_text(encoding="utf-8").splitlines()
    assert len(corpus) == 20910
    assert "jump around right\tRTURN JUMP RTURN JUMP RTURN JUMP RTURN JUMP" in corpus
    assert len((out / "train_index.txt").read_text(encoding="utf-8").splitlines()) == 16728
    assert len((out / "test_index.txt").read_text(encoding="utf-8").splitlines()) == 4182
    assert not (out / "scan_dataset.txt").exists()


def test_train_then_eval_reproduces_result(trained_run, capsys):
    """eval 在重新生成的测试集上得到与 result.json 相同的指标"""
    capsys.readouterr()
    for cell_dir in sorted(p for p in trained_run.iterdir() if p.is_dir()):
        result = CellResult.model_validate_json((cell_dir / RESULT_FILE).read_text(encoding="utf-8"))
        assert main(["eval", "--checkpoint", str(cell_dir / "checkpoint.json")]) == EXIT_OK
        printed = json.loads(capsys.readouterr().out)
        assert printed["task"] == "copy"
        assert printed["metric"] == "symbol_accuracy"
        assert printed["value"] == result.test_metric


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.json")]) == 1
    assert "CHECKPOINT_ERROR" in capsys.readouterr().err


def test_analyze_all_writes_report_and_schema(trained_run, capsys):
    checkpoint = trained_run / "P1_M4_tau0.1_seed0" / "checkpoint.json"
    assert main(["analyze", "--checkpoint", str(checkpoint), "--all", "--trials", "4"]) == EXIT_OK
    analysis_dir = checkpoint.parent / "analysis"
    report = json.loads((analysis_dir / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["task"] == "copy"
    assert report["P"] == 1
    assert report["bitcodes"]["total"] == 4 * 2
    assert len(report["fixed_points"]) == 2
    assert report["lyapunov"]["n_steps"] > report["lyapunov"]["discard"]
    assert report["variance"] is None
    assert sum(report["pca_explained_variance_ratio"]) == pytest.approx(1.0)
    schema = json.loads((analysis_dir / SCHEMA_FILE).read_text(encoding="utf-8"))
    assert "bitcodes" in schema["properties"]
    for name in ("bitcodes.csv", "fixed_points.csv", "pca.csv", "flow_field.csv"):
        assert (analysis_dir / name).is_file()
    assert capsys.readouterr().out.strip().endswith(REPORT_FILE)


def test_analyze_requires_a_selection(trained_run, capsys):
    checkpoint = trained_run / "P0_M4_tau0.1_seed0" / "checkpoint.json"
    assert main(["analyze", "--checkpoint", str(checkpoint)]) == 1
    assert "INVALID_INPUT" in capsys.readouterr().err


def test_variance_analysis_needs_labels(trained_run, capsys):
    checkpoint = trained_run / "P0_M4_tau0.1_seed0" / "checkpoint.json"
    assert main(["analyze", "--checkpoint", str(checkpoint), "--variance"]) == 1
    assert "MISSING_LABELS" in capsys.readouterr().err


def test_analyze_custom_window_and_output(trained_run, tmp_path):
    checkpoint = trained_run / "P1_M4_tau0.1_seed0" / "checkpoint.json"
    out = tmp_path / "custom"
    argv = ["analyze", "--checkpoint", str(checkpoint), "--bitcodes", "--window", "0", "3", "--out", str(out)]
    assert main(argv) == EXIT_OK
    report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["bitcodes"]["total"] == 6 * 3
    assert report["fixed_points"] is None


def test_report_rebuilds_identical_summary(trained_run):
    """report 由 result.json 重建的 summary.csv 与训练时写出的一致"""
    original = (trained_run / SUMMARY_FILE).read_text(encoding="utf-8")
    (trained_run / SUMMARY_FILE).unlink()
    assert main(["report", "--out", str(trained_run)]) == EXIT_OK
    assert (trained_run / SUMMARY_FILE).read_text(encoding="utf-8") == original
