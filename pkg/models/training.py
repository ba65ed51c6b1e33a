"""
训练相关模型定义
"""
import csv
import io
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.errors import InvalidConfigurationError
from models.params import ModelParams, Readout


class TrainConfig(BaseModel):
    """训练超参数"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(0.001, gt=0.0)
    epochs: int = Field(200, gt=0)
    batch_size: int = Field(32, gt=0)
    tau: float = Field(0.1, ge=0.0, description="MAR 正则强度")
    m_reg: Optional[int] = Field(None, ge=0, description="被正则化的单元数，None 表示 floor(M/2)")
    grad_clip_norm: Optional[float] = Field(10.0, gt=0.0)
    seed: int = 0
    validation_fraction: float = Field(0.10, gt=0.0, lt=1.0)
    early_stop_patience: Optional[int] = Field(50, gt=0)

    def resolve_m_reg(self, M: int) -> int:
        m_reg = M // 2 if self.m_reg is None else self.m_reg
        if m_reg > M:
            raise InvalidConfigurationError(f"m_reg={m_reg} exceeds M={M}", {"m_reg": m_reg, "M": M})
        return m_reg


class ModelDims(BaseModel):
    """模型规模；P_dec 仅用于 SCAN 的编码器-解码器（编码器使用 P）"""

    model_config = ConfigDict(frozen=True)

    M: int = Field(..., gt=0)
    P: int = Field(..., ge=0)
    P_dec: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _validate(self) -> "ModelDims":
        for name, value in (("P", self.P), ("P_dec", self.P_dec)):
            if value is not None and value > self.M:
                raise InvalidConfigurationError(f"{name}={value} exceeds M={self.M}", {name: value, "M": self.M})
        return self


class EpochRecord(BaseModel):
    """一个 epoch 的训练记录；epoch 0 为初始化时的评估"""

    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_metric: float


class TrainingLog(BaseModel):
    """逐 epoch 训练日志"""

    records: List[EpochRecord] = Field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "lr", "train_loss", "val_loss", "val_metric"])
        for r in self.records:
            writer.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_loss), repr(r.val_metric)])
        return buf.getvalue()


class TrainedModel(BaseModel):
    """训练得到的模型；SCAN 时 model 为解码器，encoder 为编码器"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    model: ModelParams
    readout: Readout
    encoder: Optional[ModelParams] = None


class TrainResult(BaseModel):
    """train() 的返回值"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    trained: TrainedModel
    log: TrainingLog
