"""服务层"""
from .dynamics import autonomous_rollout, bitcode_of, jacobian_at, phi_star, readout_apply, rollout, step
from .task_service import generate_dataset
from .training_service import evaluate, train

__all__ = [
    "autonomous_rollout",
    "bitcode_of",
    "jacobian_at",
    "phi_star",
    "readout_apply",
    "rollout",
    "step",
    "generate_dataset",
    "evaluate",
    "train",
]
