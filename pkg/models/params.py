"""
AL-RNN 参数与轨迹模型定义

所有数组一律为 float64，构造后只读
"""
from typing import Annotated, Any, Tuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, model_validator

from models.errors import DimensionMismatchError, InvalidConfigurationError


def _as_float_array(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]


def _check_shape(name: str, arr: np.ndarray, shape: Tuple[int, ...]) -> None:
    if arr.shape != shape:
        raise DimensionMismatchError(
            f"{name} has shape {arr.shape}, expected {shape}",
            {"field": name, "got": list(arr.shape), "expected": list(shape)},
        )


class ModelParams(BaseModel):
    """
    AL-RNN 参数集

    z_t = A ⊙ z_{t-1} + W Φ*(z_{t-1}) + C s_t + h，后 P 个坐标经过 ReLU。
    A_diag 的前 M-P 个元素在构造时被置为精确的 0。
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    M: int = Field(..., gt=0, description="隐状态维度")
    P: int = Field(..., description="分段线性单元个数（最后 P 个坐标）")
    K: int = Field(..., gt=0, description="外部输入维度")
    A_diag: FloatArray
    W: FloatArray
    C: FloatArray
    h: FloatArray

    @model_validator(mode="after")
    def _validate_structure(self) -> "ModelParams":
        if self.P < 0 or self.P > self.M:
            raise InvalidConfigurationError(
                f"P={self.P} must lie in [0, M={self.M}]", {"M": self.M, "P": self.P}
            )
        _check_shape("A_diag", self.A_diag, (self.M,))
        _check_shape("W", self.W, (self.M, self.M))
        _check_shape("C", self.C, (self.M, self.K))
        _check_shape("h", self.h, (self.M,))
        for name in ("A_diag", "W", "C", "h"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidConfigurationError(f"{name} contains non-finite entries", {"field": name})
        if np.any(self.A_diag[: self.n_linear] != 0.0):
            a = np.array(self.A_diag)
            a[: self.n_linear] = 0.0
            a.setflags(write=False)
            object.__setattr__(self, "A_diag", a)
        return self

    @property
    def n_linear(self) -> int:
        """线性单元个数 M-P"""
        return self.M - self.P

    def with_arrays(self, **arrays: np.ndarray) -> "ModelParams":
        """返回替换了部分数组的新参数集"""
        data = {"M": self.M, "P": self.P, "K": self.K, "A_diag": self.A_diag, "W": self.W, "C": self.C, "h": self.h}
        data.update(arrays)
        return ModelParams(**data)

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        if (self.M, self.P, self.K) != (other.M, other.P, other.K):
            return False
        return all(
            np.allclose(getattr(self, n), getattr(other, n), rtol=0.0, atol=atol) for n in ("A_diag", "W", "C", "h")
        )


class Readout(BaseModel):
    """线性读出层 y = D z + bias"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    D: FloatArray
    bias: FloatArray

    @model_validator(mode="after")
    def _validate_shapes(self) -> "Readout":
        if self.D.ndim != 2:
            raise DimensionMismatchError(f"D must be a matrix, got shape {self.D.shape}")
        _check_shape("bias", self.bias, (self.D.shape[0],))
        return self

    @property
    def O(self) -> int:  # noqa: E743
        return int(self.D.shape[0])

    @property
    def M(self) -> int:
        return int(self.D.shape[1])


class Trajectory(BaseModel):
    """时间索引的隐状态序列 z_1..z_T 及产生它的输入 s_1..s_T"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    states: FloatArray
    inputs: FloatArray

    @model_validator(mode="after")
    def _validate_lengths(self) -> "Trajectory":
        if self.states.shape[0] != self.inputs.shape[0]:
            raise DimensionMismatchError(
                f"states ({self.states.shape[0]}) and inputs ({self.inputs.shape[0]}) differ in length"
            )
        return self

    def __len__(self) -> int:
        return int(self.states.shape[0])


class Bitcode(BaseModel):
    """P 位子区域编号；value 为大端解释"""

    model_config = ConfigDict(frozen=True)

    bits: Tuple[int, ...]
    value: int

    @model_validator(mode="after")
    def _validate_value(self) -> "Bitcode":
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")
        if self.value != bits_to_value(self.bits):
            raise ValueError(f"value {self.value} does not match bits {self.bits}")
        return self

    @property
    def P(self) -> int:
        return len(self.bits)

    @classmethod
    def from_bits(cls, bits: Tuple[int, ...]) -> "Bitcode":
        bits = tuple(int(b) for b in bits)
        return cls(bits=bits, value=bits_to_value(bits))

    @classmethod
    def from_value(cls, value: int, P: int) -> "Bitcode":
        if value < 0 or value >= (1 << P):
            raise InvalidConfigurationError(f"bitcode value {value} out of range for P={P}")
        bits = tuple((value >> (P - 1 - i)) & 1 for i in range(P))
        return cls(bits=bits, value=value)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


def bits_to_value(bits: Tuple[int, ...]) -> int:
    """value = Σ bits[i]·2^(P-1-i)"""
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value
