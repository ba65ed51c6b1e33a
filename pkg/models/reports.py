"""
分析结果模型定义
"""
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from models.params import Bitcode, FloatArray

REPORT_SCHEMA_VERSION = 1


class ReportModel(BaseModel):
    """分析结果的公共基类；inf/nan 以 JSON 常量写出，单独序列化的子报告也能原样读回"""

    model_config = ConfigDict(ser_json_inf_nan="constants")


class BitcodeDistribution(ReportModel):
    """bitcode 计数；p(b) = n(b) / Σ n(b')"""

    counts: Dict[int, int] = Field(default_factory=dict)
    total: int = 0
    P: int

    def probabilities(self) -> Dict[int, float]:
        if self.total == 0:
            return {}
        return {code: n / self.total for code, n in self.counts.items()}

    def sorted_probabilities(self) -> List[float]:
        """按概率降序排列"""
        return sorted(self.probabilities().values(), reverse=True)


class SubregionStatistics(ReportModel):
    """子区域占用统计"""

    n_effective: int = Field(..., description="出现过的 bitcode 数")
    theoretical_max: int = Field(..., description="min(2^P, 样本数)")
    cumulative_mass: List[float] = Field(default_factory=list, description="按概率降序的累积质量")
    gini_full: Optional[float] = Field(None, description="在 min(2^P, 样本数) 个单元上计算（含零计数）")
    gini_observed: Optional[float] = Field(None, description="仅在出现过的 bitcode 上计算")


class Stability(str, Enum):
    """不动点稳定性"""
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


class FixedPointReport(ReportModel):
    """单个子区域的不动点与雅可比谱"""

    bitcode: Bitcode
    z_star: Optional[List[float]] = None
    eigenvalues_real: List[float] = Field(default_factory=list)
    eigenvalues_imag: List[float] = Field(default_factory=list)
    spectral_radius: float
    stability: Stability
    stable: bool
    virtual: bool = False
    residual: Optional[float] = None

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array(self.eigenvalues_real) + 1j * np.array(self.eigenvalues_imag)


class VarianceMetrics(ReportModel):
    """类流形方差分布指标；entropy 使用自然对数"""

    cv: float
    gini: float
    max_min_ratio: Optional[float] = Field(..., description="最小方差为 0 时为 None")
    entropy: float
    n_classes: int
    n_components: int = 0
    class_variances: Dict[str, float] = Field(default_factory=dict)


class PCAResult(ReportModel):
    """主成分分析结果"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: FloatArray
    components: FloatArray = Field(..., description="(k, M)，行向量为主成分")
    explained_variance: FloatArray
    explained_variance_ratio: FloatArray
    projections: FloatArray = Field(..., description="中心化数据在主成分上的投影 (N, k)")

    def n_components_for(self, threshold: float) -> int:
        """累积解释方差达到 threshold 所需的最少主成分数"""
        cumulative = np.cumsum(self.explained_variance_ratio)
        return int(min(len(cumulative), np.searchsorted(cumulative, threshold - 1e-12) + 1))


class AlignmentResult(ReportModel):
    """雅可比主特征向量与 PC1 的对齐程度"""

    cosine: Optional[float] = None
    complex_leading: bool = False
    leading_eigenvalue_real: float
    leading_eigenvalue_imag: float = 0.0
    leading_modulus: float


class FlowPlane(BaseModel):
    """
    流场所在的二维切片

    坐标 axes[0]、axes[1] 在网格上变化，其余坐标固定为 origin 中的值（缺省为 0）
    """

    model_config = ConfigDict(frozen=True)

    axes: Tuple[int, int] = (0, 1)
    x_range: Tuple[float, float] = (-1.0, 1.0)
    y_range: Tuple[float, float] = (-1.0, 1.0)
    origin: Optional[List[float]] = None
    grid: int = Field(30, ge=2)


class FlowField(ReportModel):
    """二维平面上的流场；U/V 为位移在平面基上的分量"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    xs: FloatArray
    ys: FloatArray
    U: FloatArray = Field(..., description="(ny, nx)")
    V: FloatArray = Field(..., description="(ny, nx)")
    displacements: FloatArray = Field(..., description="完整位移 (ny, nx, M)")


class SeparationResult(ReportModel):
    """条件间子区域分离度"""

    score: float
    exclusive: Dict[str, List[bool]] = Field(default_factory=dict)
    correlation_with_accuracy: Optional[float] = None


class ClassBitcodeProfile(ReportModel):
    """每个类别的 PWL 单元激活概率与类内偏离"""

    activation_probability: Dict[str, List[float]] = Field(default_factory=dict)
    within_class_deviation: Dict[str, float] = Field(default_factory=dict)
    mean_deviation: float = 0.0


class GatingProfile(ReportModel):
    """每个 bitcode 的访问次数及其中落在标记时刻的比例"""

    visits: Dict[int, int] = Field(default_factory=dict)
    marked_fraction: Dict[int, float] = Field(default_factory=dict)
    gating_codes: List[int] = Field(default_factory=list, description="标记时刻占多数的 bitcode")
    integration_codes: List[int] = Field(default_factory=list)


class ScanSubregionProfile(ReportModel):
    """解码器初态所在子区域与指令句法的关系"""

    distribution: BitcodeDistribution
    mean_action_length: Dict[int, float] = Field(default_factory=dict)
    and_fraction: Dict[int, float] = Field(default_factory=dict)
    after_fraction: Dict[int, float] = Field(default_factory=dict)


class LyapunovResult(ReportModel):
    max_exponent: float
    spectrum: List[float] = Field(default_factory=list)
    n_steps: int
    discard: int
    cycle_period: Optional[int] = None


class AnalysisReport(ReportModel):
    """一个已训练模型的分析报告"""

    schema_version: int = REPORT_SCHEMA_VERSION
    checkpoint: str
    task: str
    M: int
    P: int
    encoder_P: Optional[int] = None
    bitcodes: Optional[BitcodeDistribution] = None
    subregions: Optional[SubregionStatistics] = None
    fixed_points: Optional[List[FixedPointReport]] = None
    lyapunov: Optional[LyapunovResult] = None
    pca_explained_variance_ratio: Optional[List[float]] = None
    alignment: Optional[AlignmentResult] = None
    variance: Optional[VarianceMetrics] = None
    class_bitcodes: Optional[ClassBitcodeProfile] = None
    gating: Optional[GatingProfile] = None
    scan_subregions: Optional[ScanSubregionProfile] = None
    separation: Optional[SeparationResult] = None
    flow_field_csv: Optional[str] = None


class AnalysisSelection(BaseModel):
    """analyze 命令选择的分析项"""

    model_config = ConfigDict(frozen=True)

    bitcodes: bool = False
    fixed_points: bool = False
    lyapunov: bool = False
    pca: bool = False
    flow_field: bool = False
    variance: bool = False
    window: Optional[Tuple[int, int]] = Field(None, description="bitcode 统计的时间窗口 [start, stop)")
    n_trials: Optional[int] = Field(None, gt=0, description="使用的测试试次数，缺省全部")
    plane: Optional[FlowPlane] = None
    plots: bool = False

    @property
    def any(self) -> bool:
        return self.bitcodes or self.fixed_points or self.lyapunov or self.pca or self.flow_field or self.variance
