# src/config.py
"""
실행 설정 (RunConfig)
우선순위: CLI 플래그 > 설정 파일 > 환경변수 > 기본값
"""
import os
from pathlib import Path
from typing import Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from .errors import ConfigError
from .seeding import resolve_seed

load_dotenv()

LOG_LEVEL = os.getenv("DRPRIV_LOG_LEVEL", "INFO").upper()
DEFAULT_OUTPUT_DIR = "./out"

Method = Literal["taylor", "digamma", "average"]


# ===================================================================
# 설정 블록
# ===================================================================

class DataConfig(BaseModel):
    """입력 데이터와 상태 공간"""
    consumption_csv: Optional[str] = Field(
        default=None,
        description="`timestamp,power_mw[,building_id]` CSV, 없으면 합성 프로파일 사용")
    matrix_path: Optional[str] = Field(default=None, description="이미 추정된 P̄ JSON (state_space_path 필요)")
    state_space_path: Optional[str] = Field(default=None, description="`state,lower_mw,upper_mw,representative_mw` CSV")
    n_states: int = Field(default=20, ge=2, description="마르코프 상태 수")
    n_buildings: int = Field(default=100, ge=1, description="합성 앙상블 건물 수")
    noise_frac: float = Field(default=0.10, ge=0, lt=1, description="기준 프로파일 대비 최대 상대 편차")
    noise_sigma: Optional[float] = Field(default=None, ge=0, description="가우시안 잡음 표준편차 (기본 noise_frac/2)")
    synthetic_days: int = Field(default=28, ge=1)
    interval_s: int = Field(default=900, gt=0, description="합성 데이터 샘플 간격 (초)")
    window_start: Optional[int] = Field(default=None, description="이 epoch 초 이상만 사용")
    window_end: Optional[int] = Field(default=None, description="이 epoch 초 미만만 사용")

    @model_validator(mode="after")
    def _check_matrix_inputs(self):
        if self.matrix_path and not self.state_space_path:
            raise ValueError("state_space_path is required together with matrix_path")
        return self


class EventConfig(BaseModel):
    """DR 이벤트 (시점 인덱스는 시뮬레이션 horizon 기준)"""
    start: int = Field(ge=0)
    end: int = Field(gt=0)
    lead_time: int = Field(default=2, ge=0, description="이벤트 시작 몇 스텝 전에 정책을 켤지")
    incentive: float = Field(default=0.0, ge=0, description="감축 MW 당 인센티브")
    tariff: float = Field(default=0.0, ge=0, description="MWh 당 요금 (tariff_csv 가 없을 때)")
    tariff_csv: Optional[str] = Field(default=None, description="`t,price_per_mwh` CSV")

    @model_validator(mode="after")
    def _check_window(self):
        if self.start >= self.end:
            raise ValueError("event start must be < end")
        return self


class PrivacyConfig(BaseModel):
    k: float = Field(default=50.0, gt=0, description="Dirichlet 집중도")
    h: float = Field(default=0.03, gt=0, le=1, description="인접 벡터 L1 거리 상한")
    delta: Optional[float] = Field(default=None, ge=0, le=1)
    psi: Optional[float] = Field(default=None, gt=0, lt=1)
    method: Method = "digamma"
    n_samples: Optional[int] = Field(default=None, ge=1, description="평균값 접근의 표본 수 (average 전용)")
    accounting_samples: int = Field(default=20000, ge=1000, description="δ 추정 Monte Carlo 표본 수")
    omega: Optional[float] = Field(default=None, gt=0, lt=1)
    omega_bar: Optional[float] = Field(default=None, gt=0, lt=1)
    w_size: Optional[int] = Field(default=None, ge=1)
    entropy_rule: Literal["quadratic", "delta"] = Field(default="quadratic", description="E[x log x] 근사 (평균값 접근)")
    denominators: Literal["termwise", "normalizer"] = Field(default="termwise", description="기대 정책 보정항 분모")


class SweepConfig(BaseModel):
    k_values: list[float] = Field(default_factory=lambda: [25.0, 50.0, 100.0, 200.0], min_length=1)
    methods: list[Method] = Field(default_factory=lambda: ["taylor", "digamma", "average"], min_length=1)


class RunConfig(BaseModel):
    data: DataConfig = Field(default_factory=DataConfig)
    event: EventConfig
    privacy: PrivacyConfig = Field(default_factory=PrivacyConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    gamma: float = Field(default=15.0, gt=0, description="불편 비용 가중치 (통화 / 전이)")
    horizon: int = Field(default=32, ge=2, description="시뮬레이션 시점 수 T")
    rho0: Optional[list[float]] = Field(default=None, description="초기 분포, 없으면 경험적 점유율")
    seed: Optional[int] = None
    output_dir: Optional[str] = None

    def resolve_path(self, value: Optional[str], base: Path) -> Optional[Path]:
        if value is None:
            return None
        path = Path(value)
        return path if path.is_absolute() else base / path


# ===================================================================
# 로딩
# ===================================================================

def _field_name(error: dict) -> str:
    return ".".join(str(part) for part in error["loc"]) or "config"


def _check_config(config: RunConfig) -> None:
    """파일 존재 여부와 방법별 필수 필드"""
    privacy = config.privacy
    if privacy.method == "average" and privacy.n_samples is None:
        raise ConfigError("required for the average method", field="privacy.n_samples")
    if privacy.delta is None and privacy.psi is None:
        raise ConfigError("either delta or psi must be given", field="privacy.delta")
    if config.event.end > config.horizon:
        raise ConfigError(f"event end {config.event.end} exceeds horizon {config.horizon}", field="event.end")
    if config.rho0 is not None and len(config.rho0) != config.data.n_states:
        raise ConfigError(f"expected {config.data.n_states} entries", field="rho0")

    for name, value in (("data.consumption_csv", config.data.consumption_csv),
                        ("data.matrix_path", config.data.matrix_path),
                        ("data.state_space_path", config.data.state_space_path),
                        ("event.tariff_csv", config.event.tariff_csv)):
        if value is not None and not Path(value).exists():
            raise ConfigError(f"file not found: {value}", field=name)


def _absolutize(config: RunConfig, base: Path) -> RunConfig:
    """설정 파일 기준 상대 경로를 절대 경로로"""
    data = config.data.model_copy(update={
        "consumption_csv": _as_str(config.resolve_path(config.data.consumption_csv, base)),
        "matrix_path": _as_str(config.resolve_path(config.data.matrix_path, base)),
        "state_space_path": _as_str(config.resolve_path(config.data.state_space_path, base)),
    })
    event = config.event.model_copy(update={
        "tariff_csv": _as_str(config.resolve_path(config.event.tariff_csv, base)),
    })
    return config.model_copy(update={"data": data, "event": event})


def _as_str(path: Optional[Path]) -> Optional[str]:
    return None if path is None else str(path)


def load_config(path: Union[str, Path], seed: Optional[int] = None,
                output_dir: Optional[str] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", field="--config")
    try:
        config = RunConfig.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], field=_field_name(first)) from e

    config = _absolutize(config, path.parent)
    _check_config(config)

    config.seed = resolve_seed(seed if seed is not None else config.seed)
    config.output_dir = output_dir or config.output_dir or os.getenv("DRPRIV_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)
    return config
