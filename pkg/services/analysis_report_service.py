"""
分析报告组装

在检查点对应任务的测试集上运行模型，按选择执行各项分析，
写出 analysis_report.json、analysis_report.schema.json 以及各类 CSV
"""
import csv
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import settings
from models.errors import MissingLabelsError
from models.experiment import Checkpoint
from models.params import Bitcode
from models.reports import (
    AnalysisReport,
    AnalysisSelection,
    BitcodeDistribution,
    FixedPointReport,
    FlowField,
    FlowPlane,
    PCAResult,
    VarianceMetrics,
)
from models.tasks import TaskInstance, TaskName, stack_inputs
from services import analysis_service as analysis
from services.checkpoint_service import checkpoint_service
from services.dynamics import bitcode_values, rollout_batch
from services.scan_service import encode_batch
from services.task_service import generate_dataset

logger = logging.getLogger(__name__)

REPORT_FILE = "analysis_report.json"
SCHEMA_FILE = "analysis_report.schema.json"


class AnalysisData(NamedTuple):
    """
    分析所用的测试试次

    单模型任务给出整段隐状态 states (B, T, M)；
    SCAN 给出解码器初态 initial_states (B, M)
    """
    task: TaskName
    instances: List[TaskInstance]
    states: Optional[np.ndarray]
    initial_states: Optional[np.ndarray]

    @property
    def points(self) -> np.ndarray:
        """所有状态展平为 (N, M)"""
        if self.states is not None:
            return self.states.reshape(-1, self.states.shape[-1])
        return self.initial_states


def collect_states(checkpoint: Checkpoint, n_trials: Optional[int] = None) -> AnalysisData:
    dataset = generate_dataset(checkpoint.task)
    instances = list(dataset.test[:n_trials] if n_trials else dataset.test)
    trained = checkpoint_service.trained_model(checkpoint)
    if dataset.name == TaskName.SCAN:
        return AnalysisData(dataset.name, instances, None, encode_batch(trained.encoder, instances))
    states = rollout_batch(trained.model, None, stack_inputs(instances))
    return AnalysisData(dataset.name, instances, states, None)


def default_window(data: AnalysisData) -> Optional[Tuple[int, int]]:
    """复制任务默认统计回忆阶段，其余任务统计整条轨迹"""
    if data.task == TaskName.COPY and data.instances:
        return data.instances[0].loss_window
    return None


def labels_for(data: AnalysisData) -> List[int]:
    if data.task != TaskName.CONTEXTUAL:
        raise MissingLabelsError(
            f"task {data.task.value} has no class labels for variance analysis", {"task": data.task.value}
        )
    return [int(inst.target) for inst in data.instances]


def dominant_bitcode(points: np.ndarray, P: int) -> Bitcode:
    """访问次数最多的子区域；并列时取最先出现的"""
    value, _ = Counter(bitcode_values(points, P)).most_common(1)[0]
    return Bitcode.from_value(value, P)


def default_plane(points: np.ndarray) -> FlowPlane:
    """以状态均值为原点、前两个坐标为轴、±3 倍标准差为范围的切片"""
    origin = points.mean(axis=0)
    spread = points.std(axis=0)
    extent = [3.0 * s if s > 0 else 1.0 for s in spread[:2]]
    return FlowPlane(
        axes=(0, 1),
        x_range=(float(origin[0] - extent[0]), float(origin[0] + extent[0])),
        y_range=(float(origin[1] - extent[1]), float(origin[1] + extent[1])),
        origin=[float(v) for v in origin],
        grid=settings.flow_grid_points,
    )


# ---------------------------------------------------------------------------
# CSV 输出
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_bitcodes_csv(dist: BitcodeDistribution, path: Path) -> Path:
    ranked = sorted(dist.counts.items(), key=lambda item: (-item[1], item[0]))
    rows, cumulative = [], 0.0
    for rank, (code, count) in enumerate(ranked, start=1):
        p = count / dist.total
        cumulative += p
        rows.append([rank, code, str(Bitcode.from_value(code, dist.P)), count, repr(p), repr(cumulative)])
    return _write_csv(path, ["rank", "bitcode", "bits", "count", "probability", "cumulative"], rows)


def write_fixed_points_csv(reports: Sequence[FixedPointReport], path: Path) -> Path:
    rows = [
        [
            r.bitcode.value, str(r.bitcode), r.z_star is not None, r.virtual, r.stability.value,
            repr(r.spectral_radius), "" if r.residual is None else repr(r.residual),
            "" if r.z_star is None else " ".join(repr(v) for v in r.z_star),
        ]
        for r in reports
    ]
    header = ["bitcode", "bits", "has_fixed_point", "virtual", "stability", "spectral_radius", "residual", "z_star"]
    return _write_csv(path, header, rows)


def write_pca_csv(result: PCAResult, path: Path) -> Path:
    cumulative = np.cumsum(result.explained_variance_ratio)
    rows = [
        [i + 1, repr(float(v)), repr(float(r)), repr(float(c))]
        for i, (v, r, c) in enumerate(zip(result.explained_variance, result.explained_variance_ratio, cumulative))
    ]
    return _write_csv(path, ["component", "explained_variance", "ratio", "cumulative"], rows)


def write_flow_field_csv(field: FlowField, path: Path) -> Path:
    rows = [
        [repr(float(x)), repr(float(y)), repr(float(field.U[j, i])), repr(float(field.V[j, i]))]
        for j, y in enumerate(field.ys)
        for i, x in enumerate(field.xs)
    ]
    return _write_csv(path, ["x", "y", "u", "v"], rows)


def write_variance_csv(metrics: VarianceMetrics, path: Path) -> Path:
    return _write_csv(path, ["class", "variance"], [[k, repr(v)] for k, v in metrics.class_variances.items()])


# ---------------------------------------------------------------------------
# 报告
# ---------------------------------------------------------------------------

def _bitcode_section(data: AnalysisData, P: int, selection: AnalysisSelection, update: Dict[str, Any]) -> BitcodeDistribution:
    if data.task == TaskName.SCAN:
        commands = [inst.meta["command"] for inst in data.instances]
        lengths = [len(inst.meta["actions"].split()) for inst in data.instances]
        profile = analysis.scan_subregion_profile(data.initial_states, commands, lengths, P)
        update["scan_subregions"] = profile
        dist = profile.distribution
    else:
        window = selection.window or default_window(data)
        dist = analysis.bitcode_distribution(list(data.states), P, window)
        if data.task == TaskName.ADDITION:
            marked = [inst.meta["marked"] for inst in data.instances]
            update["gating"] = analysis.gating_subregion_profile(list(data.states), marked, P)
    update["bitcodes"] = dist
    update["subregions"] = analysis.subregion_statistics(dist)
    return dist


def _contextual_section(checkpoint: Checkpoint, data: AnalysisData, update: Dict[str, Any]) -> None:
    """情境任务：按情境分组的子区域分离度、每类的 bitcode 剖面"""
    labels = labels_for(data)
    final = data.states[:, -1]
    update["class_bitcodes"] = analysis.class_bitcode_profile(final, labels, checkpoint.model.P)
    readout = checkpoint.readout
    predicted = np.argmax(final @ readout.D.T + readout.bias, axis=1)
    groups: Dict[str, List[np.ndarray]] = {}
    correct: Dict[str, List[bool]] = {}
    for b, inst in enumerate(data.instances):
        key = f"context{inst.meta['context']}"
        groups.setdefault(key, []).append(data.states[b])
        correct.setdefault(key, []).append(bool(predicted[b] == labels[b]))
    if len(groups) >= 2:
        T = data.states.shape[1]
        update["separation"] = analysis.subregion_separation_score(groups, T - 1, checkpoint.model.P, correct)


def _fixed_point_section(checkpoint: Checkpoint, data: AnalysisData) -> List[FixedPointReport]:
    params = checkpoint.model
    if params.P <= settings.max_fixed_point_bits:
        return analysis.all_fixed_points(params)
    observed = sorted(set(bitcode_values(data.points, params.P)))
    logger.warning(
        f"P={params.P} exceeds max_fixed_point_bits={settings.max_fixed_point_bits}, "
        f"solving only the {len(observed)} visited subregion(s)"
    )
    return [analysis.fixed_point(params, Bitcode.from_value(v, params.P)) for v in observed]


def run_analysis(
    checkpoint: Checkpoint,
    selection: AnalysisSelection,
    out_dir: Union[str, Path],
    checkpoint_path: str = "",
) -> AnalysisReport:
    """执行所选分析，写出报告、schema 与 CSV，返回报告对象"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = checkpoint.model
    data = collect_states(checkpoint, selection.n_trials)
    update: Dict[str, Any] = {}

    if selection.variance:
        labels = labels_for(data)
        metrics = analysis.variance_metrics(data.states[:, -1], labels)
        update["variance"] = metrics
        write_variance_csv(metrics, out / "variance.csv")

    if selection.bitcodes:
        dist = _bitcode_section(data, params.P, selection, update)
        if data.task == TaskName.CONTEXTUAL:
            _contextual_section(checkpoint, data, update)
        write_bitcodes_csv(dist, out / "bitcodes.csv")

    if selection.fixed_points:
        reports = _fixed_point_section(checkpoint, data)
        update["fixed_points"] = reports
        write_fixed_points_csv(reports, out / "fixed_points.csv")

    if selection.lyapunov:
        update["lyapunov"] = analysis.lyapunov_report(params)

    if selection.pca:
        points = data.points
        result = analysis.pca(points)
        update["pca_explained_variance_ratio"] = [float(r) for r in result.explained_variance_ratio]
        write_pca_csv(result, out / "pca.csv")
        update["alignment"] = analysis.eigvec_pc_alignment(params, dominant_bitcode(points, params.P), points)

    if selection.flow_field:
        if params.M < 2:
            logger.warning("Flow field needs M >= 2, skipped")
        else:
            field = analysis.flow_field(params, selection.plane or default_plane(data.points))
            update["flow_field_csv"] = str(write_flow_field_csv(field, out / "flow_field.csv").name)
            if selection.plots:
                from services.plot_service import plot_flow_field

                plot_flow_field(field, out / "flow_field.svg")

    report = AnalysisReport(
        checkpoint=checkpoint_path,
        task=data.task.value,
        M=params.M,
        P=params.P,
        encoder_P=checkpoint.encoder.P if checkpoint.encoder is not None else None,
        **update,
    )
    (out / REPORT_FILE).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    (out / SCHEMA_FILE).write_text(json.dumps(AnalysisReport.model_json_schema(), indent=2) + "\n", encoding="utf-8")
    if selection.plots and report.subregions is not None:
        from services.plot_service import plot_cumulative_mass

        plot_cumulative_mass({f"P={params.P}": report.subregions.cumulative_mass}, out / "cumulative_mass.svg")
    logger.info(f"Analysis report written: {out / REPORT_FILE}")
    return report
