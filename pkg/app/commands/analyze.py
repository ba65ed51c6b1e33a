"""
analyze 子命令 - 对检查点执行动力学分析
"""
import argparse
import logging
from pathlib import Path

from models.errors import InvalidInputError
from models.reports import AnalysisSelection, FlowPlane
from services.analysis_report_service import REPORT_FILE, run_analysis
from services.checkpoint_service import checkpoint_service
from services.plot_service import plotting_available

logger = logging.getLogger(__name__)

SELECTORS = ("bitcodes", "fixed_points", "lyapunov", "pca", "flow_field", "variance")


def register(subparsers: argparse._SubParsersAction, parents: list) -> None:
    parser = subparsers.add_parser("analyze", parents=parents, help="分析已训练模型的动力学")
    parser.add_argument("--checkpoint", required=True, help="checkpoint.json 路径")
    parser.add_argument("--out", default=None, help="输出目录，缺省为检查点所在目录下的 analysis/")
    parser.add_argument("--bitcodes", action="store_true", help="bitcode 分布与子区域统计")
    parser.add_argument("--fixed-points", action="store_true", help="各子区域不动点与稳定性")
    parser.add_argument("--lyapunov", action="store_true", help="Lyapunov 谱与周期检测")
    parser.add_argument("--pca", action="store_true", help="隐状态 PCA 与主特征向量对齐")
    parser.add_argument("--flow-field", action="store_true", help="二维切片上的流场")
    parser.add_argument("--variance", action="store_true", help="类流形方差指标（需要类别标签）")
    parser.add_argument("--all", action="store_true", help="执行任务适用的全部分析")
    parser.add_argument("--window", type=int, nargs=2, metavar=("START", "STOP"), help="bitcode 统计窗口")
    parser.add_argument("--trials", type=int, default=None, help="使用的测试试次数")
    parser.add_argument("--plane-axes", type=int, nargs=2, metavar=("I", "J"), default=None)
    parser.add_argument("--plane-range", type=float, nargs=4, metavar=("X0", "X1", "Y0", "Y1"), default=None)
    parser.add_argument("--plots", action="store_true", help="同时输出 SVG（需要 matplotlib）")
    parser.set_defaults(handler=run)


def selection_from_args(args: argparse.Namespace, task_has_labels: bool) -> AnalysisSelection:
    chosen = {name: bool(getattr(args, name)) for name in SELECTORS}
    if args.all:
        chosen = {name: True for name in SELECTORS}
        chosen["variance"] = task_has_labels
    if not any(chosen.values()):
        raise InvalidInputError(
            "select at least one analysis: --bitcodes, --fixed-points, --lyapunov, --pca, --flow-field, --variance or --all"
        )
    plane = None
    if args.plane_axes or args.plane_range:
        x0, x1, y0, y1 = args.plane_range or (-1.0, 1.0, -1.0, 1.0)
        plane = FlowPlane(axes=tuple(args.plane_axes or (0, 1)), x_range=(x0, x1), y_range=(y0, y1))
    plots = args.plots
    if plots and not plotting_available():
        logger.warning("matplotlib is not installed, skipping SVG output (pip install 'alrnn-lab[plot]')")
        plots = False
    return AnalysisSelection(
        **chosen,
        window=tuple(args.window) if args.window else None,
        n_trials=args.trials,
        plane=plane,
        plots=plots,
    )


def run(args: argparse.Namespace) -> int:
    checkpoint = checkpoint_service.load(args.checkpoint)
    selection = selection_from_args(args, task_has_labels=checkpoint.task.name.value == "contextual")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "analysis"
    run_analysis(checkpoint, selection, out, checkpoint_path=str(args.checkpoint))
    print(out / REPORT_FILE)
    return 0
