"""
实验编排服务

读取 TOML 配置，按 (seed, P, M, tau) 网格训练，每个单元写出独立的检查点、日志与结果文件，
最后汇总为 summary.csv。单元之间不共享状态，可以在进程池中并行执行。
"""
import csv
import io
import logging
import statistics
import tomllib
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from pydantic import ValidationError

from config.settings import settings
from models.errors import CheckpointError, InvalidConfigurationError, TrainingDivergedError
from models.experiment import CellResult, ExperimentConfig, GridCell, SummaryRow
from models.training import TrainingLog
from services.checkpoint_service import checkpoint_service
from services.task_service import METRIC_NAMES, generate_dataset, metric_higher_is_better
from services.training_service import evaluate, train

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.json"
LOG_FILE = "log.csv"
RESULT_FILE = "result.json"
SUMMARY_FILE = "summary.csv"


class ExperimentService:
    """
    实验编排服务

    output_dir 与 jobs 缺省取自 settings；单个调用可以覆盖
    """

    def __init__(self, output_dir: Optional[str] = None, jobs: Optional[int] = None) -> None:
        self.output_dir = output_dir or settings.output_dir
        self.jobs = settings.jobs if jobs is None else jobs

    # ------------------------------------------------------------------
    # 配置
    # ------------------------------------------------------------------

    @staticmethod
    def format_validation_errors(error: ValidationError) -> List[str]:
        """把 pydantic 错误整理成 `section.field: message` 形式"""
        lines = []
        for item in error.errors():
            location = ".".join(str(part) for part in item["loc"]) or "<root>"
            lines.append(f"{location}: {item['msg']}")
        return lines

    def parse_config(self, text: str, source: str = "<config>") -> ExperimentConfig:
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise InvalidConfigurationError(f"{source}: invalid TOML: {e}", {"path": source})
        try:
            return ExperimentConfig.model_validate(raw)
        except ValidationError as e:
            errors = self.format_validation_errors(e)
            logger.error(f"Invalid configuration {source}: {'; '.join(errors)}")
            raise InvalidConfigurationError(f"{source}: " + "; ".join(errors), {"path": source, "errors": errors})

    def load_config(self, path: Union[str, Path], seed: Optional[int] = None) -> ExperimentConfig:
        """读取并校验实验配置；seed 给定时覆盖 experiment.seeds"""
        path = Path(path)
        if not path.is_file():
            raise InvalidConfigurationError(f"config file not found: {path}", {"path": str(path)})
        config = self.parse_config(path.read_text(encoding="utf-8"), str(path))
        if seed is not None:
            experiment = config.experiment.model_copy(update={"seeds": [seed]})
            config = config.model_copy(update={"experiment": experiment})
        return config

    def experiment_dir(self, config: ExperimentConfig, out: Union[str, Path, None] = None) -> Path:
        return Path(out or self.output_dir) / config.experiment.name

    # ------------------------------------------------------------------
    # 单元执行
    # ------------------------------------------------------------------

    @staticmethod
    def completed_result(cell_dir: Path) -> Optional[CellResult]:
        """结果文件存在且检查点哈希一致时返回已完成的结果"""
        result_path = cell_dir / RESULT_FILE
        if not result_path.is_file():
            return None
        try:
            result = CellResult.model_validate_json(result_path.read_text(encoding="utf-8"))
        except ValidationError:
            logger.warning(f"Ignoring unreadable result file {result_path}")
            return None
        checkpoint = cell_dir / CHECKPOINT_FILE
        if not checkpoint.is_file() or checkpoint_service.file_sha256(checkpoint) != result.checkpoint_sha256:
            logger.warning(f"Checkpoint of {cell_dir.name} is missing or changed, rerunning the cell")
            return None
        return result

    def run_cell(self, config: ExperimentConfig, cell: GridCell, root: Union[str, Path]) -> CellResult:
        """
        训练一个网格单元并写出 checkpoint.json、log.csv、result.json

        发散时保存此前最优的有限快照并把结果标记为 diverged
        """
        cell_dir = Path(root) / cell.dirname
        done = self.completed_result(cell_dir)
        if done is not None:
            logger.info(f"[{cell.tag}] Already complete, skipping")
            return done

        cell_dir.mkdir(parents=True, exist_ok=True)
        descriptor = config.descriptor(cell)
        dataset = generate_dataset(descriptor)
        train_config = config.train_config(cell, settings.grad_clip_norm, settings.early_stop_patience)
        diverged = False
        try:
            outcome = train(dataset, train_config, config.dims(cell), tag=cell.tag)
            trained, log = outcome.trained, outcome.log
        except TrainingDivergedError as e:
            logger.error(f"[{cell.tag}] {e.message}; keeping the best finite parameters")
            if e.last_finite is None:
                raise
            trained, log, diverged = e.last_finite, e.partial_log or TrainingLog(), True

        checkpoint = checkpoint_service.build(trained, descriptor, train_config)
        checkpoint_path = checkpoint_service.save(checkpoint, cell_dir / CHECKPOINT_FILE)
        (cell_dir / LOG_FILE).write_text(log.to_csv(), encoding="utf-8")
        metric = evaluate(trained, dataset)
        result = CellResult(
            cell=cell,
            metric_name=METRIC_NAMES[dataset.name],
            test_metric=metric,
            best_epoch=log.best_epoch,
            epochs_run=log.records[-1].epoch if log.records else 0,
            stopped_early=log.stopped_early,
            diverged=diverged,
            checkpoint=f"{cell.dirname}/{CHECKPOINT_FILE}",
            checkpoint_sha256=checkpoint_service.file_sha256(checkpoint_path),
        )
        (cell_dir / RESULT_FILE).write_text(result.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"[{cell.tag}] test {result.metric_name}={metric:.6f}")
        return result

    def run_experiment(
        self,
        config: ExperimentConfig,
        out: Union[str, Path, None] = None,
        jobs: Optional[int] = None,
    ) -> List[CellResult]:
        """运行整个网格并写出 summary.csv；结果按网格顺序返回"""
        root = self.experiment_dir(config, out)
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.json").write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
        cells = config.cells()
        jobs = self.jobs if jobs is None else jobs
        logger.info(f"Experiment {config.experiment.name}: {len(cells)} cell(s), jobs={jobs}, output={root}")

        args = [(config, cell, str(root)) for cell in cells]
        if jobs <= 1:
            results = [self.run_cell(*a) for a in args]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_cell_job, args))

        self.write_summary(results, root / SUMMARY_FILE, higher_is_better=metric_higher_is_better(config.task.name))
        return results

    # ------------------------------------------------------------------
    # 汇总
    # ------------------------------------------------------------------

    @staticmethod
    def summarize(results: Sequence[CellResult], higher_is_better: bool = True) -> List[SummaryRow]:
        """按 (P, M, tau) 聚合跨种子的均值、样本标准差与最优值，保持首次出现的顺序"""
        groups: Dict[Tuple[int, int, float], List[CellResult]] = defaultdict(list)
        for result in results:
            groups[(result.cell.P, result.cell.M, result.cell.tau)].append(result)
        rows = []
        for (P, M, tau), members in groups.items():
            values = [r.test_metric for r in members if r.test_metric is not None]
            if not values:
                continue
            rows.append(
                SummaryRow(
                    P=P,
                    M=M,
                    tau=tau,
                    metric_name=members[0].metric_name,
                    n_seeds=len(values),
                    mean=statistics.fmean(values),
                    std=statistics.stdev(values) if len(values) > 1 else 0.0,
                    best=max(values) if higher_is_better else min(values),
                    n_diverged=sum(r.diverged for r in members),
                )
            )
        return rows

    @staticmethod
    def summary_csv(rows: Sequence[SummaryRow]) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["P", "M", "tau", "metric", "n_seeds", "mean", "std", "best", "n_diverged"])
        for r in rows:
            writer.writerow(
                [r.P, r.M, repr(r.tau), r.metric_name, r.n_seeds, repr(r.mean), repr(r.std), repr(r.best), r.n_diverged]
            )
        return buf.getvalue()

    def write_summary(
        self, results: Sequence[CellResult], path: Union[str, Path], higher_is_better: bool = True
    ) -> List[SummaryRow]:
        rows = self.summarize(results, higher_is_better)
        Path(path).write_text(self.summary_csv(rows), encoding="utf-8")
        logger.info(f"Summary written: {path} ({len(rows)} row(s))")
        return rows

    @staticmethod
    def collect_results(root: Union[str, Path]) -> List[CellResult]:
        """读取实验目录下所有单元的 result.json，按目录名排序"""
        root = Path(root)
        if not root.is_dir():
            raise CheckpointError(f"experiment directory not found: {root}", {"path": str(root)})
        results = []
        for path in sorted(root.glob(f"*/{RESULT_FILE}")):
            try:
                results.append(CellResult.model_validate_json(path.read_text(encoding="utf-8")))
            except ValidationError as e:
                raise CheckpointError(f"invalid result file {path}: {e.error_count()} error(s)", {"path": str(path)})
        return results


# 全局单例
experiment_service = ExperimentService()


def _run_cell_job(args: Tuple[ExperimentConfig, GridCell, str]) -> CellResult:
    """进程池入口；子进程中使用自己的单例"""
    return experiment_service.run_cell(*args)
