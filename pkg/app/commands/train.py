"""
train 子命令 - 按配置网格训练并写出检查点、日志与汇总
"""
import argparse
import logging

from services.experiment_service import experiment_service

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction, parents: list) -> None:
    parser = subparsers.add_parser("train", parents=parents, help="训练配置中的全部网格单元")
    parser.add_argument("--config", required=True, help="实验配置 TOML 文件")
    parser.add_argument("--seed", type=int, default=None, help="只运行该种子（覆盖 experiment.seeds）")
    parser.add_argument("--jobs", type=int, default=None, help="并行进程数，缺省取 ALRNN_JOBS")
    parser.add_argument("--out", default=None, help="输出根目录，缺省取 ALRNN_OUTPUT_DIR")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    """
    运行实验网格

    Returns:
        0 全部单元正常结束；2 至少一个单元发散（其最优有限快照已保存）
    """
    config = experiment_service.load_config(args.config, seed=args.seed)
    results = experiment_service.run_experiment(config, out=args.out, jobs=args.jobs)
    diverged = [r.cell.tag for r in results if r.diverged]
    if diverged:
        logger.error(f"{len(diverged)} cell(s) diverged: {', '.join(diverged)}")
        return 2
    return 0
