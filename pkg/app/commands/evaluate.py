"""
eval 子命令 - 在重新生成的测试集上评估检查点
"""
import argparse
import logging

from app.commands import print_json
from models.tasks import TaskDescriptor
from services.checkpoint_service import checkpoint_service
from services.experiment_service import experiment_service
from services.task_service import METRIC_NAMES, generate_dataset
from services.training_service import evaluate

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction, parents: list) -> None:
    parser = subparsers.add_parser("eval", parents=parents, help="评估检查点")
    parser.add_argument("--checkpoint", required=True, help="checkpoint.json 路径")
    parser.add_argument("--config", default=None, help="改用该配置中的任务（缺省使用检查点记录的任务）")
    parser.add_argument("--seed", type=int, default=None, help="重新生成任务数据时使用的种子")
    parser.add_argument("--split", choices=("test", "train"), default="test")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    checkpoint = checkpoint_service.load(args.checkpoint)
    descriptor = checkpoint.task
    if args.config:
        config = experiment_service.load_config(args.config)
        seed = checkpoint.seed if config.task.seed is None else config.task.seed
        descriptor = TaskDescriptor(name=config.task.name, params=config.task.params, seed=seed)
    if args.seed is not None:
        descriptor = descriptor.model_copy(update={"seed": args.seed})
    dataset = generate_dataset(descriptor)
    value = evaluate(checkpoint_service.trained_model(checkpoint), dataset, split=args.split)
    logger.info(f"{args.checkpoint}: {METRIC_NAMES[dataset.name]}={value:.6f} on {args.split}")
    print_json({"task": dataset.name.value, "split": args.split, "metric": METRIC_NAMES[dataset.name], "value": value})
    return 0
