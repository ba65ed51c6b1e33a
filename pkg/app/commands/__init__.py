"""子命令模块；每个模块提供 register(subparsers, parents) 并设置 handler"""
import json
import sys
from typing import Any


def print_json(data: Any) -> None:
    json.dump(data, sys.stdout, indent=2)
    sys.stdout.write("\n")
