"""数据模型"""
from .errors import ALRNNError
from .params import Bitcode, ModelParams, Readout, Trajectory
from .tasks import LossKind, LossSpec, TaskDataset, TaskDescriptor, TaskInstance, TaskName
from .training import ModelDims, TrainConfig, TrainedModel, TrainingLog, TrainResult
from .experiment import Checkpoint, CellResult, ExperimentConfig, GridCell
from .reports import AnalysisReport, BitcodeDistribution, FixedPointReport, VarianceMetrics

__all__ = [
    "ALRNNError",
    "Bitcode",
    "ModelParams",
    "Readout",
    "Trajectory",
    "LossKind",
    "LossSpec",
    "TaskDataset",
    "TaskDescriptor",
    "TaskInstance",
    "TaskName",
    "ModelDims",
    "TrainConfig",
    "TrainedModel",
    "TrainingLog",
    "TrainResult",
    "Checkpoint",
    "CellResult",
    "ExperimentConfig",
    "GridCell",
    "AnalysisReport",
    "BitcodeDistribution",
    "FixedPointReport",
    "VarianceMetrics",
]
