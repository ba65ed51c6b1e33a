"""
SVG 绘图（可选依赖 matplotlib，安装 plot 扩展后启用）
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

from models.experiment import SummaryRow
from models.reports import FlowField

logger = logging.getLogger(__name__)


def plotting_available() -> bool:
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_summary(rows: Sequence[SummaryRow], path: Union[str, Path]) -> Path:
    """指标随 P 的变化，每个 (M, tau) 一条带误差棒的折线"""
    plt = _pyplot()
    series: Dict[str, List[SummaryRow]] = {}
    for row in rows:
        series.setdefault(f"M={row.M} tau={row.tau:g}", []).append(row)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, members in series.items():
        members = sorted(members, key=lambda r: r.P)
        ax.errorbar(
            [r.P for r in members], [r.mean for r in members], yerr=[r.std for r in members],
            marker="o", capsize=3, label=label,
        )
    if rows:
        ax.set_ylabel(rows[0].metric_name)
    ax.set_xlabel("P")
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Plot written: {path}")
    return path


def plot_cumulative_mass(curves: Dict[str, Sequence[float]], path: Union[str, Path]) -> Path:
    """按概率降序的 bitcode 累积质量曲线"""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        ax.plot(range(1, len(curve) + 1), curve, label=label)
    ax.set_xscale("log")
    ax.set_xlabel("number of bitcodes")
    ax.set_ylabel("cumulative mass")
    ax.set_ylim(0.0, 1.02)
    if curves:
        ax.legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Plot written: {path}")
    return path


def plot_flow_field(field: FlowField, path: Union[str, Path]) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.quiver(field.xs, field.ys, field.U, field.V, angles="xy")
    ax.set_aspect("equal")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Plot written: {path}")
    return path
