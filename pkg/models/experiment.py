"""
实验配置、检查点与结果模型定义
"""
from itertools import product
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.params import ModelParams, Readout
from models.tasks import TaskDescriptor, TaskName
from models.training import ModelDims, TrainConfig

CHECKPOINT_SCHEMA_VERSION = 1

IntGrid = Union[int, List[int]]
FloatGrid = Union[float, List[float]]


def _as_list(value: Union[Any, List[Any]]) -> List[Any]:
    return list(value) if isinstance(value, list) else [value]


class TaskSection(BaseModel):
    """[task] 段；seed 缺省时使用网格单元的种子"""

    model_config = ConfigDict(extra="forbid")

    name: TaskName
    seed: Optional[int] = None
    params: Dict[str, Any] = Field(default_factory=dict)


class ModelSection(BaseModel):
    """[model] 段；M、P 可以是列表（网格）"""

    model_config = ConfigDict(extra="forbid")

    M: IntGrid = 30
    P: IntGrid = 1
    P_dec: Optional[int] = Field(None, ge=0, description="SCAN 解码器的 P，缺省与编码器相同")

    @field_validator("M", "P")
    @classmethod
    def _non_empty(cls, value: IntGrid) -> IntGrid:
        values = _as_list(value)
        if not values:
            raise ValueError("grid must not be empty")
        if any(v < 0 for v in values):
            raise ValueError("values must be non-negative")
        return value


class TrainSection(BaseModel):
    """[train] 段；tau 可以是列表（网格），其余字段同 TrainConfig"""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(0.001, gt=0.0)
    epochs: int = Field(200, gt=0)
    batch_size: int = Field(32, gt=0)
    tau: FloatGrid = 0.1
    m_reg: Optional[int] = Field(None, ge=0)
    grad_clip_norm: Optional[float] = Field(None, gt=0.0, description="缺省取 settings.grad_clip_norm")
    validation_fraction: float = Field(0.10, gt=0.0, lt=1.0)
    early_stop_patience: Optional[int] = Field(None, gt=0, description="缺省取 settings.early_stop_patience")

    @field_validator("tau")
    @classmethod
    def _non_negative(cls, value: FloatGrid) -> FloatGrid:
        values = _as_list(value)
        if not values or any(v < 0 for v in values):
            raise ValueError("tau must be a non-negative number or a non-empty list of them")
        return value


class ExperimentSection(BaseModel):
    """[experiment] 段"""

    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    seeds: List[int] = Field(default_factory=lambda: [0])

    @field_validator("seeds")
    @classmethod
    def _unique(cls, value: List[int]) -> List[int]:
        if not value or len(set(value)) != len(value):
            raise ValueError("seeds must be a non-empty list of distinct integers")
        return value


class GridCell(BaseModel):
    """网格中的一个 (seed, P, M, tau) 单元"""

    model_config = ConfigDict(frozen=True)

    seed: int
    P: int
    M: int
    tau: float

    @property
    def tag(self) -> str:
        return f"cell P={self.P} M={self.M} tau={self.tau:g} seed={self.seed}"

    @property
    def dirname(self) -> str:
        return f"P{self.P}_M{self.M}_tau{self.tau:g}_seed{self.seed}"


class ExperimentConfig(BaseModel):
    """一个实验配置文件（TOML）"""

    model_config = ConfigDict(extra="forbid")

    task: TaskSection
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)

    @model_validator(mode="after")
    def _validate_dims(self) -> "ExperimentConfig":
        for M, P in product(_as_list(self.model.M), _as_list(self.model.P)):
            if M < 1 or P > M:
                raise ValueError(f"model: P={P} must lie in [0, M={M}] with M >= 1")
            if self.model.P_dec is not None and self.model.P_dec > M:
                raise ValueError(f"model: P_dec={self.model.P_dec} exceeds M={M}")
        return self

    def cells(self) -> List[GridCell]:
        """按 (P, M, tau, seed) 的字典序展开网格"""
        return [
            GridCell(seed=seed, P=P, M=M, tau=tau)
            for P, M, tau, seed in product(
                _as_list(self.model.P), _as_list(self.model.M), _as_list(self.train.tau), self.experiment.seeds
            )
        ]

    def descriptor(self, cell: GridCell) -> TaskDescriptor:
        seed = cell.seed if self.task.seed is None else self.task.seed
        return TaskDescriptor(name=self.task.name, params=self.task.params, seed=seed)

    def dims(self, cell: GridCell) -> ModelDims:
        return ModelDims(M=cell.M, P=cell.P, P_dec=self.model.P_dec)

    def train_config(self, cell: GridCell, grad_clip_norm: float, early_stop_patience: int) -> TrainConfig:
        section = self.train.model_dump(exclude={"tau"})
        if section["grad_clip_norm"] is None:
            section["grad_clip_norm"] = grad_clip_norm
        if section["early_stop_patience"] is None:
            section["early_stop_patience"] = early_stop_patience
        return TrainConfig(**section, tau=cell.tau, seed=cell.seed)


class Checkpoint(BaseModel):
    """
    训练结果检查点

    浮点以最短可逆十进制表示写出，save -> load -> save 逐字节一致
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    schema_version: int = CHECKPOINT_SCHEMA_VERSION
    task: TaskDescriptor
    seed: int
    M: int
    P: int
    K: int
    O: int
    model: ModelParams
    readout: Readout
    encoder: Optional[ModelParams] = None
    config: Dict[str, Any] = Field(default_factory=dict, description="训练配置回显")


class CellResult(BaseModel):
    """一个网格单元的训练结果（result.json）"""

    cell: GridCell
    metric_name: str
    test_metric: Optional[float] = None
    best_epoch: int = 0
    epochs_run: int = 0
    stopped_early: bool = False
    diverged: bool = False
    checkpoint: str = Field(..., description="相对实验目录的检查点路径")
    checkpoint_sha256: str


class SummaryRow(BaseModel):
    """summary.csv 的一行：同一 (P, M, tau) 下跨种子的统计"""

    P: int
    M: int
    tau: float
    metric_name: str
    n_seeds: int
    mean: float
    std: float
    best: float
    n_diverged: int = 0
