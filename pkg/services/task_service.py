"""
基准任务生成服务

所有生成器都是 (参数, seed) 的纯函数：同样的输入得到逐字节一致的数据集
"""
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Union

import numpy as np

from models.errors import InvalidConfigurationError, InvalidInputError
from models.tasks import LossKind, LossSpec, TaskDataset, TaskDescriptor, TaskInstance, TaskName

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# 复制任务
# ---------------------------------------------------------------------------

def copy_layout(n_seq: int, delay: int) -> Dict[str, int]:
    """复制任务各阶段在序列中的位置（0 起索引）"""
    cue_step = n_seq + delay
    return {"encode_stop": n_seq, "cue_step": cue_step, "recall_start": cue_step + 1, "length": cue_step + 1 + n_seq}


def _copy_instance(symbols: np.ndarray, n_sym: int, delay: int) -> TaskInstance:
    n_seq = len(symbols)
    layout = copy_layout(n_seq, delay)
    inputs = np.zeros((layout["length"], n_sym + 1))
    inputs[np.arange(n_seq), symbols] = 1.0
    inputs[layout["cue_step"], n_sym] = 1.0
    return TaskInstance(
        inputs=inputs,
        target=[int(s) for s in symbols],
        loss_window=(layout["recall_start"], layout["length"]),
        meta={"cue_step": layout["cue_step"]},
    )


def gen_copy(
    n_sym: int = 4,
    n_seq: int = 8,
    delay: int = 200,
    n_train: int = 1000,
    n_test: int = 200,
    seed: int = 0,
) -> TaskDataset:
    """
    复制任务

    编码阶段 n_seq 步（前 n_sym 个通道 one-hot），随后 delay 步零输入，
    1 步提示（第 n_sym 个通道为 1），再 n_seq 步零输入的回忆阶段。
    训练与测试序列从 n_sym^n_seq 的空间中独立采样。
    """
    if n_sym < 2:
        raise InvalidConfigurationError(f"copy task needs n_sym >= 2, got {n_sym}")
    if n_seq < 1 or delay < 0:
        raise InvalidConfigurationError(f"invalid copy task lengths n_seq={n_seq}, delay={delay}")
    rng = np.random.default_rng(seed)
    symbols = rng.integers(0, n_sym, size=(n_train + n_test, n_seq))
    instances = [_copy_instance(row, n_sym, delay) for row in symbols]
    start, stop = instances[0].loss_window
    logger.debug(f"Generated copy task: {n_train}/{n_test} sequences of length {instances[0].T}")
    return TaskDataset(
        descriptor=TaskDescriptor(
            name=TaskName.COPY,
            params={"n_sym": n_sym, "n_seq": n_seq, "delay": delay, "n_train": n_train, "n_test": n_test},
            seed=seed,
        ),
        train=instances[:n_train],
        test=instances[n_train:],
        input_dim=n_sym + 1,
        output_dim=n_sym,
        loss=LossSpec(kind=LossKind.WINDOW_CROSS_ENTROPY, window=(start, stop)),
    )


# ---------------------------------------------------------------------------
# 加法问题
# ---------------------------------------------------------------------------

def gen_addition(T: int = 100, n_train: int = 2000, n_test: int = 200, seed: int = 0) -> TaskDataset:
    """
    加法问题

    通道 1 为 Uniform[0,1] 数值流，通道 2 为二值掩码，恰有两个不同位置置 1，
    且都位于前半段；目标为两个标记值之和，在最后一步读出。
    """
    if T < 4:
        raise InvalidConfigurationError(f"addition task needs T >= 4, got {T}")
    rng = np.random.default_rng(seed)
    instances: List[TaskInstance] = []
    for _ in range(n_train + n_test):
        values = rng.uniform(0.0, 1.0, size=T)
        marked = np.sort(rng.choice(T // 2, size=2, replace=False))
        inputs = np.zeros((T, 2))
        inputs[:, 0] = values
        inputs[marked, 1] = 1.0
        instances.append(
            TaskInstance(
                inputs=inputs,
                target=float(values[marked].sum()),
                loss_window=(T - 1, T),
                meta={"marked": [int(m) for m in marked]},
            )
        )
    return TaskDataset(
        descriptor=TaskDescriptor(
            name=TaskName.ADDITION, params={"T": T, "n_train": n_train, "n_test": n_test}, seed=seed
        ),
        train=instances[:n_train],
        test=instances[n_train:],
        input_dim=2,
        output_dim=1,
        loss=LossSpec(kind=LossKind.FINAL_SQUARED_ERROR),
    )


# ---------------------------------------------------------------------------
# 情境多稳态任务
# ---------------------------------------------------------------------------

def contextual_label(evidence_sum: float, context: int) -> int:
    """情境 0 下标签为累积证据的符号（正为 1），情境 1 下取反"""
    base = 1 if evidence_sum > 0.0 else 0
    return base if context == 0 else 1 - base


def gen_contextual(
    T_seq: int = 100,
    n_train: int = 1000,
    n_test: int = 200,
    seed: int = 0,
    drift: float = 0.1,
    recall_cue: bool = False,
) -> TaskDataset:
    """
    情境依赖的证据积累任务

    第 1 步给出 one-hot 情境提示（通道 1-2），随后 T_seq 步标量证据（通道 3），
    证据服从 Gaussian(±drift, 1)，漂移符号逐试次随机。
    recall_cue=True 时在末尾追加一步提示（通道 4）。
    """
    if T_seq < 2:
        raise InvalidConfigurationError(f"contextual task needs T_seq >= 2, got {T_seq}")
    rng = np.random.default_rng(seed)
    K = 4 if recall_cue else 3
    T = 1 + T_seq + (1 if recall_cue else 0)
    instances: List[TaskInstance] = []
    for _ in range(n_train + n_test):
        context = int(rng.integers(0, 2))
        mu = drift if rng.integers(0, 2) == 0 else -drift
        evidence = rng.normal(mu, 1.0, size=T_seq)
        inputs = np.zeros((T, K))
        inputs[0, context] = 1.0
        inputs[1:1 + T_seq, 2] = evidence
        if recall_cue:
            inputs[T - 1, 3] = 1.0
        total = float(evidence.sum())
        instances.append(
            TaskInstance(
                inputs=inputs,
                target=contextual_label(total, context),
                loss_window=(T - 1, T),
                meta={"context": context, "drift": mu, "evidence_sum": total},
            )
        )
    return TaskDataset(
        descriptor=TaskDescriptor(
            name=TaskName.CONTEXTUAL,
            params={
                "T_seq": T_seq, "n_train": n_train, "n_test": n_test, "drift": drift, "recall_cue": recall_cue,
            },
            seed=seed,
        ),
        train=instances[:n_train],
        test=instances[n_train:],
        input_dim=K,
        output_dim=2,
        loss=LossSpec(kind=LossKind.FINAL_CROSS_ENTROPY),
    )


# ---------------------------------------------------------------------------
# 生成器注册表
# ---------------------------------------------------------------------------

def _gen_scan(**kwargs: Any) -> TaskDataset:
    from services.scan_service import gen_scan_simple_split

    return gen_scan_simple_split(**kwargs)


GENERATORS: Dict[TaskName, Callable[..., TaskDataset]] = {
    TaskName.COPY: gen_copy,
    TaskName.ADDITION: gen_addition,
    TaskName.CONTEXTUAL: gen_contextual,
    TaskName.SCAN: _gen_scan,
}


def generate_dataset(descriptor: TaskDescriptor) -> TaskDataset:
    """按描述符重新生成数据集"""
    generator = GENERATORS[descriptor.name]
    try:
        return generator(seed=descriptor.seed, **descriptor.params)
    except TypeError as e:
        raise InvalidConfigurationError(
            f"invalid parameters for task {descriptor.name.value}: {e}", {"params": descriptor.params}
        ) from e


# ---------------------------------------------------------------------------
# 评价指标
# ---------------------------------------------------------------------------

METRIC_NAMES: Dict[TaskName, str] = {
    TaskName.COPY: "symbol_accuracy",
    TaskName.ADDITION: "mse",
    TaskName.CONTEXTUAL: "accuracy",
    TaskName.SCAN: "sequence_accuracy",
}


def metric_higher_is_better(name: TaskName) -> bool:
    return name != TaskName.ADDITION


def symbol_accuracy(predicted: np.ndarray, targets: np.ndarray) -> float:
    """逐符号正确率（回忆阶段）"""
    predicted = np.asarray(predicted)
    targets = np.asarray(targets)
    if predicted.shape != targets.shape:
        raise InvalidInputError(f"prediction shape {predicted.shape} != target shape {targets.shape}")
    return float(np.mean(predicted == targets)) if targets.size else 0.0


def mean_squared_error(predicted: np.ndarray, targets: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    return float(np.mean((predicted - targets) ** 2)) if targets.size else 0.0


def classification_accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    predicted = np.asarray(predicted).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    return float(np.mean(predicted == labels)) if labels.size else 0.0


def sequence_accuracy(predicted: Sequence[Sequence[int]], targets: Sequence[Sequence[int]]) -> float:
    """整条动作序列完全一致才算正确"""
    if len(predicted) != len(targets):
        raise InvalidInputError(f"{len(predicted)} predictions for {len(targets)} targets")
    if not targets:
        return 0.0
    return float(np.mean([list(p) == list(t) for p, t in zip(predicted, targets)]))


def evaluate_metric(task: TaskName, outputs: Sequence[Any], instances: Sequence[TaskInstance]) -> float:
    """
    由模型输出计算任务指标

    Args:
        outputs: 复制/加法/情境任务为损失窗口内的读出 (window, O)；SCAN 为解码出的动作 id 序列
    """
    if len(outputs) != len(instances):
        raise InvalidInputError(f"{len(outputs)} outputs for {len(instances)} instances")
    if task == TaskName.COPY:
        if not instances:
            return 0.0
        predicted = np.concatenate([np.argmax(np.asarray(y), axis=1) for y in outputs])
        return symbol_accuracy(predicted, np.concatenate([np.asarray(inst.target) for inst in instances]))
    if task == TaskName.ADDITION:
        return mean_squared_error(
            np.array([np.asarray(y)[-1, 0] for y in outputs]), np.array([inst.target for inst in instances])
        )
    if task == TaskName.CONTEXTUAL:
        predicted = np.array([int(np.argmax(np.asarray(y)[-1])) for y in outputs])
        return classification_accuracy(predicted, np.array([inst.target for inst in instances]))
    from services.scan_service import EOS

    targets = [[t for t in inst.target if t != EOS] for inst in instances]
    return sequence_accuracy(outputs, targets)


# ---------------------------------------------------------------------------
# 文本导出
# ---------------------------------------------------------------------------

def _format_target(target: Union[int, float, List[int]]) -> str:
    if isinstance(target, list):
        return "seq " + " ".join(str(t) for t in target)
    if isinstance(target, int):
        return f"class {target}"
    return f"value {target!r}"


def _parse_target(text: str) -> Union[int, float, List[int]]:
    kind, _, rest = text.partition(" ")
    if kind == "seq":
        return [int(t) for t in rest.split()]
    if kind == "class":
        return int(rest)
    return float(rest)


def export_dataset(dataset: TaskDataset, path: Union[str, Path]) -> Path:
    """
    导出为行式文本：每个实例一条记录

    记录格式：
        @instance <split> <index>
        target: <class N | value X | seq a b c>
        window: <start> <stop>
        meta: <json>
        <T 行 CSV 输入>
        @end
    """
    path = Path(path)
    lines = [
        "# task: " + dataset.descriptor.model_dump_json(),
        f"# input_dim: {dataset.input_dim}",
        f"# output_dim: {dataset.output_dim}",
        "# loss: " + dataset.loss.model_dump_json(),
    ]
    for split, instances in (("train", dataset.train), ("test", dataset.test)):
        for idx, inst in enumerate(instances):
            lines.append(f"@instance {split} {idx}")
            lines.append("target: " + _format_target(inst.target))
            lines.append(f"window: {inst.loss_window[0]} {inst.loss_window[1]}")
            lines.append("meta: " + json.dumps(inst.meta, sort_keys=True))
            lines.extend(",".join(repr(float(v)) for v in row) for row in inst.inputs)
            lines.append("@end")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Exported {len(dataset.train)}+{len(dataset.test)} instances to {path}")
    return path


def load_dataset_text(path: Union[str, Path]) -> TaskDataset:
    """读取 export_dataset 写出的文件"""
    header: Dict[str, str] = {}
    splits: Dict[str, List[TaskInstance]] = {"train": [], "test": []}
    current: Dict[str, Any] = {}
    rows: List[List[float]] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if raw.startswith("# "):
            key, _, value = raw[2:].partition(": ")
            header[key] = value
        elif raw.startswith("@instance "):
            _, split, _ = raw.split()
            current = {"split": split}
            rows = []
        elif raw.startswith("target: "):
            current["target"] = _parse_target(raw[len("target: "):])
        elif raw.startswith("window: "):
            start, stop = raw[len("window: "):].split()
            current["window"] = (int(start), int(stop))
        elif raw.startswith("meta: "):
            current["meta"] = json.loads(raw[len("meta: "):])
        elif raw == "@end":
            splits[current["split"]].append(
                TaskInstance(
                    inputs=np.array(rows), target=current["target"],
                    loss_window=current["window"], meta=current["meta"],
                )
            )
        elif raw:
            rows.append([float(v) for v in raw.split(",")])
    return TaskDataset(
        descriptor=TaskDescriptor.model_validate_json(header["task"]),
        train=splits["train"],
        test=splits["test"],
        input_dim=int(header["input_dim"]),
        output_dim=int(header["output_dim"]),
        loss=LossSpec.model_validate_json(header["loss"]),
    )
