"""
AL-RNN Lab - 命令行入口

子命令：train / eval / analyze / scan-data / report
退出码：0 成功，1 用法或配置错误，2 运行时错误（如发散）
"""
import argparse
import logging
import sys
from typing import List, Optional

from config.settings import settings
from models.errors import ALRNNError
from app.commands import analyze, evaluate, report, scan_data, train

logger = logging.getLogger(__name__)

COMMANDS = (train, evaluate, analyze, scan_data, report)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """命令行参数错误"""


class _ArgumentParser(argparse.ArgumentParser):
    """参数错误时抛出 UsageError，而不是以 argparse 默认的退出码 2 退出"""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="输出 DEBUG 级别日志")

    parser = _ArgumentParser(
        prog="alrnn",
        description="Almost-Linear RNN：训练、评估与动力学分析",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in COMMANDS:
        command.register(subparsers, [common])
    return parser


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(level=level, format=settings.log_format, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage_error: {e}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except ALRNNError as e:
        logger.debug(f"{e.error_code} details: {e.details}")
        print(f"{e.error_code}: {e.message}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted, completed cells are kept for resume")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
