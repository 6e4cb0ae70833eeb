# src/dr_sim.py
"""
수요반응(DR) 이벤트 시뮬레이션
- 요금/인센티브로 효용 스케줄 U_t^β 구성
- 정책 활성화 창(lead_time 전 ~ 이벤트 끝) 밖에서는 기본 행렬 P̄ 사용
- 분포 전파 → 기대 전력 궤적 → 감축량 지표
"""
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from loguru import logger

from .errors import DataError, ParameterError, ParseError
from .lsmdp_core import propagate
from .models import DrEvent, Policy, PowerTrajectory, StateSpace, TransitionMatrix, UtilitySchedule
from .reports import MetricsReport, ScenarioMetrics

TARIFF_COLUMNS = ("t", "price_per_mwh")
SECONDS_PER_HOUR = 3600.0


# ===================================================================
# 💰 효용 스케줄
# ===================================================================

def load_tariff_csv(path: Union[str, Path]) -> np.ndarray:
    """`t,price_per_mwh`, t 는 0 부터 빠짐없이"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in TARIFF_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"missing column(s): {', '.join(missing)}", row=0)
    if frame.empty:
        raise ParseError("no samples")

    steps = pd.to_numeric(frame["t"], errors="coerce").to_numpy()
    prices = pd.to_numeric(frame["price_per_mwh"], errors="coerce").to_numpy(dtype=float)
    for i in range(len(frame)):
        if steps[i] != i:
            raise ParseError(f"expected t={i} at row {i + 1}", row=i + 1)
        if not np.isfinite(prices[i]) or prices[i] < 0:
            raise ParseError(f"invalid price at row {i + 1}", row=i + 1)
    return prices


def build_utility_schedule(space: StateSpace, event: DrEvent, horizon: int,
                           baseline_power: Optional[float] = None,
                           interval_s: float = 900.0) -> UtilitySchedule:
    """
    활성 창 [start - lead_time, end): U_t^β = -tariff_t · power_β · Δt
    이벤트 창 [start, end): + incentive · max(0, baseline_power - power_β)
    창 밖은 0
    """
    event.validate(horizon)
    if interval_s <= 0:
        raise ParameterError("interval_s must be > 0", field="interval_s")
    if event.incentive > 0 and baseline_power is None:
        raise ParameterError("baseline_power is required when incentive > 0", field="baseline_power")

    power = space.representative_power
    dt_hours = interval_s / SECONDS_PER_HOUR
    tariff = event.tariff_array(horizon)
    values = np.zeros((horizon, space.n))

    active = slice(event.active_start, event.end)
    values[active] -= tariff[active, np.newaxis] * power[np.newaxis, :] * dt_hours
    if event.incentive > 0:
        reduction = np.maximum(0.0, baseline_power - power)
        values[event.start:event.end] += event.incentive * reduction[np.newaxis, :]
    return UtilitySchedule(values)


# ===================================================================
# ⚡ 시뮬레이션
# ===================================================================

def activate(policy: Policy, p_bar: TransitionMatrix, event: DrEvent) -> Policy:
    """활성 창 밖의 전이는 P̄ 로 되돌림"""
    event.validate(policy.horizon)
    if not np.array_equal(policy.support_mask, p_bar.support_mask):
        raise ParameterError("policy and default matrix supports differ", field="policy")
    mats = policy.matrices.copy()
    steps = np.arange(policy.horizon - 1)
    outside = (steps < event.active_start) | (steps >= event.end)
    mats[outside] = p_bar.rows
    return Policy(mats, policy.gamma, policy.support_mask)


def simulate_event(policy: Policy, rho0, space: StateSpace, name: str = "") -> PowerTrajectory:
    """기대 전력 = Σ_β ρ_t[β]·representative_power[β]"""
    if policy.n != space.n:
        raise ParameterError(f"policy has {policy.n} states, state space has {space.n}", field="policy")
    rho = propagate(policy, rho0).rho
    return PowerTrajectory(rho @ space.representative_power, name)


def baseline_power_at_start(p_bar: TransitionMatrix, rho0, space: StateSpace, event: DrEvent) -> float:
    """무제어(P̄) 기대 전력의 이벤트 시작 시점 값"""
    horizon = max(2, event.start + 1)
    baseline = simulate_event(Policy.constant(p_bar, horizon, 1.0), rho0, space, "default")
    return float(baseline.expected_power[event.start])


# ===================================================================
# 📊 지표
# ===================================================================

def _event_peak(reduction: np.ndarray, event: DrEvent) -> float:
    return float(reduction[event.start:event.end].max())


def capacity_metrics(baseline: PowerTrajectory, controlled: PowerTrajectory, event: DrEvent,
                     reference: Optional[PowerTrajectory] = None) -> ScenarioMetrics:
    """
    감축량 = baseline - controlled
    reference 가 주어지면 capacity_ratio = 이 궤적의 최대 감축 / reference 의 최대 감축
    """
    trajectories = [controlled] + ([reference] if reference is not None else [])
    if any(len(t) != len(baseline) for t in trajectories):
        raise ParameterError("trajectories must have equal lengths", field="controlled")
    event.validate(len(baseline))

    reduction = baseline.expected_power - controlled.expected_power
    peak = _event_peak(reduction, event)
    ratio = None
    if reference is not None:
        reference_peak = _event_peak(baseline.expected_power - reference.expected_power, event)
        ratio = peak / reference_peak if reference_peak > 0 else None
    return ScenarioMetrics(
        per_step_reduction_mw=reduction.tolist(),
        peak_reduction_mw=peak,
        mean_reduction_mw=float(reduction[event.start:event.end].mean()),
        capacity_ratio=ratio,
    )


def metrics_report(baseline: PowerTrajectory, scenarios: dict[str, PowerTrajectory], event: DrEvent,
                   reference: Optional[str] = None) -> MetricsReport:
    """시나리오 이름별 지표, reference 이름이 있으면 그 궤적 대비 비율을 함께 기록"""
    ref = scenarios.get(reference) if reference else None
    report = MetricsReport(
        event_start=event.start,
        event_end=event.end,
        lead_time=event.lead_time,
        scenarios={name: capacity_metrics(baseline, traj, event, ref) for name, traj in scenarios.items()},
    )
    for name, m in report.scenarios.items():
        logger.debug(f"⚡ {name}: peak={m.peak_reduction_mw:.4g} MW, mean={m.mean_reduction_mw:.4g} MW")
    return report


def trajectories_frame(trajectories: list[PowerTrajectory]) -> pd.DataFrame:
    """긴 형식: scenario,t,expected_power_mw"""
    frames = [
        pd.DataFrame({
            "scenario": traj.name,
            "t": np.arange(len(traj)),
            "expected_power_mw": traj.expected_power,
        })
        for traj in trajectories
    ]
    return pd.concat(frames, ignore_index=True)
