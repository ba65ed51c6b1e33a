"""
report 子命令 - 由各单元的 result.json 重建汇总并绘图
"""
import argparse
import logging
from pathlib import Path
from typing import Dict, List

from models.experiment import CellResult, ExperimentConfig
from models.reports import AnalysisReport
from services.analysis_report_service import REPORT_FILE
from services.experiment_service import SUMMARY_FILE, experiment_service
from services.plot_service import plot_cumulative_mass, plot_summary, plotting_available
from services.task_service import metric_higher_is_better

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction, parents: list) -> None:
    parser = subparsers.add_parser("report", parents=parents, help="重建实验汇总与图表")
    parser.add_argument("--out", required=True, help="实验目录（包含各单元子目录）")
    parser.add_argument("--plots", action="store_true", help="输出 SVG 图（需要 matplotlib）")
    parser.set_defaults(handler=run)


def order_results(root: Path, results: List[CellResult]) -> List[CellResult]:
    """有 config.json 时按网格顺序排列，保证与 train 写出的汇总一致"""
    config_path = root / "config.json"
    if not config_path.is_file():
        return results
    config = ExperimentConfig.model_validate_json(config_path.read_text(encoding="utf-8"))
    by_dir = {r.cell.dirname: r for r in results}
    ordered = [by_dir.pop(cell.dirname) for cell in config.cells() if cell.dirname in by_dir]
    return ordered + sorted(by_dir.values(), key=lambda r: r.cell.dirname)


def cumulative_curves(root: Path) -> Dict[str, List[float]]:
    curves: Dict[str, List[float]] = {}
    for path in sorted(root.glob(f"*/analysis/{REPORT_FILE}")):
        report = AnalysisReport.model_validate_json(path.read_text(encoding="utf-8"))
        if report.subregions is not None:
            curves[path.parent.parent.name] = report.subregions.cumulative_mass
    return curves


def run(args: argparse.Namespace) -> int:
    root = Path(args.out)
    results = order_results(root, experiment_service.collect_results(root))
    if not results:
        logger.warning(f"No finished cells under {root}")
        return 0
    higher = True
    config_path = root / "config.json"
    if config_path.is_file():
        config = ExperimentConfig.model_validate_json(config_path.read_text(encoding="utf-8"))
        higher = metric_higher_is_better(config.task.name)
    rows = experiment_service.write_summary(results, root / SUMMARY_FILE, higher_is_better=higher)
    print(root / SUMMARY_FILE)

    if args.plots:
        if not plotting_available():
            logger.warning("matplotlib is not installed, skipping SVG output (pip install 'alrnn-lab[plot]')")
            return 0
        plot_summary(rows, root / "summary.svg")
        curves = cumulative_curves(root)
        if curves:
            plot_cumulative_mass(curves, root / "cumulative_mass.svg")
    return 0
