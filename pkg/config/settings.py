"""
应用配置
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional


class Settings(BaseSettings):
    """应用配置（可通过 ALRNN_ 前缀的环境变量或 .env 覆盖）"""

    model_config = SettingsConfigDict(
        env_prefix="ALRNN_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # 应用基础配置
    app_version: str = "1.0.0"

    # 输出与并行
    output_dir: str = "runs"
    jobs: int = 1  # 网格单元并行进程数

    # 训练默认值
    early_stop_patience: int = 50  # 验证集无改进的最大 epoch 数
    grad_clip_norm: Optional[float] = 10.0
    log_every_epochs: int = 10

    # 分析默认值
    max_fixed_point_bits: int = 16  # 超过该 P 时拒绝枚举全部 2^P 子区域
    lyapunov_steps: int = 5000
    lyapunov_discard: int = 500
    flow_grid_points: int = 30
    pca_variance_threshold: float = 0.8
    marginal_tolerance: float = 1e-9  # |λ| 距 1 在此范围内视为临界
    fixed_point_residual_tol: float = 1e-8

    # SCAN 解码
    scan_decode_cap: int = 64

    # 日志配置
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


settings = Settings()
