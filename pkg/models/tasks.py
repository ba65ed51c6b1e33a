"""
任务与数据集模型定义
"""
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.errors import InvalidInputError
from models.params import FloatArray


class TaskName(str, Enum):
    """基准任务"""
    COPY = "copy"
    ADDITION = "addition"
    CONTEXTUAL = "contextual"
    SCAN = "scan"


class LossKind(str, Enum):
    """损失类型"""
    FINAL_CROSS_ENTROPY = "final-cross-entropy"
    WINDOW_CROSS_ENTROPY = "window-cross-entropy"
    FINAL_SQUARED_ERROR = "final-squared-error"


class LossSpec(BaseModel):
    """
    损失定义

    window 为半开区间 [start, stop)，索引指向状态序列 z_1..z_T（0 起）。
    window 为 None 时取最后一步。
    """

    model_config = ConfigDict(frozen=True)

    kind: LossKind
    window: Optional[Tuple[int, int]] = None

    def resolve_window(self, T: int) -> Tuple[int, int]:
        """返回在长度 T 序列上的有效窗口"""
        if self.window is None:
            return (T - 1, T) if T > 0 else (0, 0)
        start, stop = self.window
        if not 0 <= start <= stop <= T:
            raise InvalidInputError(f"loss window {self.window} outside sequence of length {T}")
        return start, stop

    @property
    def is_classification(self) -> bool:
        return self.kind != LossKind.FINAL_SQUARED_ERROR


Target = Union[int, float, List[int]]


class TaskInstance(BaseModel):
    """单个输入/目标序列对"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    inputs: FloatArray = Field(..., description="输入 (T, K)")
    target: Target
    loss_window: Tuple[int, int]
    meta: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _validate(self) -> "TaskInstance":
        if self.inputs.ndim != 2 or self.inputs.shape[0] == 0:
            raise InvalidInputError(f"inputs must be a nonempty (T, K) array, got shape {self.inputs.shape}")
        start, stop = self.loss_window
        if not 0 <= start <= stop <= self.inputs.shape[0]:
            raise InvalidInputError(f"loss window {self.loss_window} outside sequence of length {self.T}")
        return self

    @property
    def T(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def K(self) -> int:
        return int(self.inputs.shape[1])


class TaskDescriptor(BaseModel):
    """任务名称及生成参数"""

    model_config = ConfigDict(frozen=True)

    name: TaskName
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0


class TaskDataset(BaseModel):
    """训练/测试集合；同一 (参数, seed) 重新生成时完全一致"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    descriptor: TaskDescriptor
    train: List[TaskInstance]
    test: List[TaskInstance]
    input_dim: int
    output_dim: int
    loss: LossSpec

    @property
    def name(self) -> TaskName:
        return self.descriptor.name

    @property
    def seed(self) -> int:
        return self.descriptor.seed


def stack_inputs(instances: List[TaskInstance]) -> np.ndarray:
    """把等长实例的输入堆叠成 (B, T, K)"""
    lengths = {inst.T for inst in instances}
    if len(lengths) != 1:
        raise InvalidInputError(f"cannot stack instances of different lengths {sorted(lengths)}")
    return np.stack([inst.inputs for inst in instances])
