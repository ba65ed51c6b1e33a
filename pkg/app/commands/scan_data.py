"""
scan-data 子命令 - 生成 SCAN 语料与 simple split 索引
"""
import argparse
import logging
from pathlib import Path
from typing import Iterable

from services.scan_service import gen_scan_simple_split, scan_enumerate, simple_split_indices
from services.task_service import export_dataset

logger = logging.getLogger(__name__)

CORPUS_FILE = "scan_corpus.txt"
TRAIN_INDEX_FILE = "train_index.txt"
TEST_INDEX_FILE = "test_index.txt"
DATASET_FILE = "scan_dataset.txt"


def register(subparsers: argparse._SubParsersAction, parents: list) -> None:
    parser = subparsers.add_parser("scan-data", parents=parents, help="生成 SCAN 语料与划分")
    parser.add_argument("--out", required=True, help="输出目录")
    parser.add_argument("--seed", type=int, default=0, help="simple split 的随机种子")
    parser.add_argument("--split-fraction", type=float, default=0.8, help="训练集比例")
    parser.add_argument("--no-export", action="store_true", help="不写出编码后的数据集文本")
    parser.set_defaults(handler=run)


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


def write_scan_files(out: Path, seed: int = 0, split_fraction: float = 0.8, export: bool = True) -> dict:
    """写出语料（command TAB actions）、训练/测试索引，以及可选的数据集文本"""
    out.mkdir(parents=True, exist_ok=True)
    corpus = scan_enumerate()
    train_idx, test_idx = simple_split_indices(len(corpus), split_fraction, seed)
    _write_lines(out / CORPUS_FILE, (f"{command}\t{' '.join(actions)}" for command, actions in corpus))
    _write_lines(out / TRAIN_INDEX_FILE, (str(i) for i in train_idx))
    _write_lines(out / TEST_INDEX_FILE, (str(i) for i in test_idx))
    if export:
        export_dataset(gen_scan_simple_split(split_fraction=split_fraction, seed=seed), out / DATASET_FILE)
    logger.info(f"SCAN corpus: {len(corpus)} commands, {len(train_idx)} train / {len(test_idx)} test -> {out}")
    return {"commands": len(corpus), "train": len(train_idx), "test": len(test_idx)}


def run(args: argparse.Namespace) -> int:
    write_scan_files(Path(args.out), args.seed, args.split_fraction, export=not args.no_export)
    return 0
