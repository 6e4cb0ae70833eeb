# src/reports.py
"""
출력 산출물(JSON) 스키마
모든 번들 파일은 여기 정의된 모델로 직렬화/검증됩니다.
"""
from typing import Optional

from pydantic import BaseModel, Field

# ===================================================================
# 행렬 / 정책
# ===================================================================


class MatrixFile(BaseModel):
    """기본 전이 행렬 (rows[β][α] = β → α)"""
    n: int = Field(ge=2)
    rows: list[list[float]]
    support_mask: list[list[bool]]


class PolicyFile(BaseModel):
    gamma: float = Field(gt=0)
    T: int = Field(ge=2, description="시점 수 (전이 행렬은 T-1 개)")
    matrices: list[list[list[float]]]
    method: Optional[str] = None
    k: Optional[float] = None


# ===================================================================
# 프라이버시 / 비용
# ===================================================================


class PrivacyReport(BaseModel):
    k: float = Field(gt=0)
    h: float = Field(gt=0, le=1)
    psi: float
    delta: float = Field(ge=0, le=1)
    delta_stderr: float = Field(ge=0)
    epsilon: Optional[float] = Field(default=None, description="유효한 행 ε 의 최댓값")
    per_row_epsilon: list[Optional[float]]
    per_row_delta: list[Optional[float]] = Field(default_factory=list)
    excluded_rows: list[int] = Field(default_factory=list, description="지지집합 < 2 로 공개 그대로 둔 행")
    omega: Optional[float] = None
    omega_bar: Optional[float] = None
    w_size: Optional[int] = None


class PerStateCost(BaseModel):
    t: int
    beta: int
    delta_c: float


class CostReportFile(BaseModel):
    method: str
    k: Optional[float] = None
    per_state: list[PerStateCost]
    total: float
    realized_gap: Optional[float] = None
    monte_carlo_total: Optional[float] = None
    monte_carlo_stderr: Optional[float] = None
    monte_carlo_ci95: Optional[list[float]] = None
    analytical_minus_monte_carlo: Optional[float] = None
    within_ci95: Optional[bool] = None


class SampleSetSummary(BaseModel):
    k: float
    N: int = Field(ge=1)
    seed: int
    redraws: int = 0
    mean_policy: list[list[list[float]]]
    analytical_policy: list[list[list[float]]]
    row_sum_diagnostics: list[list[float]] = Field(description="재정규화 전 해석적 정책 행 합")
    l1_gap: float = Field(description="행별 L1 거리 최댓값 (평균 정책 vs 해석적 정책)")


# ===================================================================
# DR 시뮬레이션 / 번들
# ===================================================================


class ScenarioMetrics(BaseModel):
    per_step_reduction_mw: list[float]
    peak_reduction_mw: float
    mean_reduction_mw: float
    capacity_ratio: Optional[float] = Field(default=None, description="reference 궤적 대비 최대 감축량 비율")


class MetricsReport(BaseModel):
    event_start: int
    event_end: int
    lead_time: int
    scenarios: dict[str, ScenarioMetrics]


class ManifestEntry(BaseModel):
    path: str
    sha256: str
    schema_name: Optional[str] = Field(default=None, description="검증에 사용하는 모델 이름 (CSV 는 None)")


class Manifest(BaseModel):
    command: str
    seed: int
    artifacts: list[ManifestEntry]
