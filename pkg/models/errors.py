"""
错误类型定义

每个错误都携带 error_code / message / details，命令行层据此映射退出码
"""
from typing import Any, Dict, Optional


class ALRNNError(Exception):
    """所有领域错误的基类"""

    error_code: str = "ALRNN_ERROR"
    exit_code: int = 2

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """转换为 {error_code, message, details} 字典"""
        return {"error_code": self.error_code, "message": self.message, "details": self.details}


class InvalidConfigurationError(ALRNNError):
    """配置非法（P 超出范围、配置文件字段错误等）"""

    error_code = "INVALID_CONFIGURATION"
    exit_code = 1


class InvalidInputError(ALRNNError):
    """输入非法"""

    error_code = "INVALID_INPUT"
    exit_code = 1


class DimensionMismatchError(InvalidInputError):
    """维度不匹配，details 中给出双方形状"""

    error_code = "DIMENSION_MISMATCH"


class ScanParseError(InvalidInputError):
    """SCAN 指令无法解析"""

    error_code = "SCAN_PARSE_ERROR"

    def __init__(self, token: Optional[str], position: int, command: str) -> None:
        shown = "<end of command>" if token is None else repr(token)
        super().__init__(
            f"Unexpected token {shown} at position {position} in command {command!r}",
            {"token": token, "position": position, "command": command},
        )
        self.token = token
        self.position = position


class UndefinedMeanError(InvalidInputError):
    """均值为零或向量为空，Gini 等指标无定义"""

    error_code = "UNDEFINED_MEAN"


class MissingLabelsError(InvalidInputError):
    """分析需要标签，但任务没有类别标签"""

    error_code = "MISSING_LABELS"


class CheckpointError(ALRNNError):
    """检查点格式错误或违反结构约束"""

    error_code = "CHECKPOINT_ERROR"
    exit_code = 1


class TrainingDivergedError(ALRNNError):
    """训练损失出现非有限值

    last_finite 保存此前验证损失最优的有限参数快照，partial_log 为发散前的训练日志
    """

    error_code = "TRAINING_DIVERGED"
    exit_code = 2

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None, last_finite: Any = None) -> None:
        super().__init__(message, details)
        self.last_finite = last_finite
        self.partial_log: Any = None


class TrajectoryDivergedError(ALRNNError):
    """轨迹发散到非有限值"""

    error_code = "TRAJECTORY_DIVERGED"
    exit_code = 2

    def __init__(self, step: int) -> None:
        super().__init__(f"Trajectory became non-finite at step {step}", {"step": step})
        self.step = step
