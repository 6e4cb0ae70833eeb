# src/pipeline.py
"""
CLI 단계 명령 (estimate / run / sweep)
추정 → 풀이 → 사유화 → 표본 → 시뮬레이션 → 보고서
단계별 시드는 설정의 정수 시드 하나에서 stage 이름으로 파생됩니다.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from rich.progress import track

from .average_value import (
    expected_cost_analytical,
    expected_policy_analytical,
    mean_policy,
    sample_private_policies,
    sample_summary,
)
from .config import RunConfig
from .dirichlet_privacy import adjacent_matrix, matrix_privacy_report
from .dr_sim import (
    activate,
    baseline_power_at_start,
    build_utility_schedule,
    load_tariff_csv,
    metrics_report,
    simulate_event,
    trajectories_frame,
)
from .ensemble_model import (
    discretize,
    estimate_default_matrix,
    load_consumption_csv,
    load_matrix_json,
    load_state_space_csv,
    save_matrix_json,
    save_state_space_csv,
    support_density,
    synthesize_ensemble,
    synthetic_base_profile,
)
from .errors import ConfigError, DataError
from .io_utils import BundleWriter, ensure_dir
from .lsmdp_core import evaluate_objective, solve
from .models import (
    ConsumptionSeries,
    CostReport,
    DrEvent,
    Policy,
    PrivacyParams,
    StateSpace,
    TransitionMatrix,
    UtilitySchedule,
)
from .private_policies import solve_private_method, stochastic_report
from .reports import (
    CostReportFile,
    Manifest,
    MetricsReport,
    PolicyFile,
    PrivacyReport,
    SampleSetSummary,
)
from .seeding import stage_seed

SCATTER_SAMPLES = 500
SWEEP_COLUMNS = ["method", "k", "epsilon", "delta", "total_cost", "event_mean_reduction_mw"]


@dataclass
class Instance:
    """한 번의 실행이 공유하는 문제 인스턴스"""
    p_bar: TransitionMatrix
    space: StateSpace
    rho0: np.ndarray
    utility: UtilitySchedule
    event: DrEvent
    interval_s: float
    baseline_power: float
    path: Optional[np.ndarray] = None


@dataclass
class PrivateSolution:
    policy: Policy
    cost: CostReport
    summary: Optional[SampleSetSummary] = None


@dataclass
class RunResult:
    out_dir: Path
    nonprivate_policy: Policy
    private: PrivateSolution
    privacy: PrivacyReport
    metrics: MetricsReport
    manifest: Manifest


# ===================================================================
# 🧱 인스턴스 구성
# ===================================================================

def _load_aggregate(config: RunConfig) -> ConsumptionSeries:
    data = config.data
    if data.consumption_csv:
        series = load_consumption_csv(data.consumption_csv)
    else:
        series = synthetic_base_profile(days=data.synthetic_days, interval_s=data.interval_s,
                                        seed=stage_seed(config.seed, "profile"))

    if series.n_buildings == 1 and data.n_buildings > 1:
        members = synthesize_ensemble(series, data.n_buildings, data.noise_frac,
                                      stage_seed(config.seed, "ensemble"), data.noise_sigma)
        series = ConsumptionSeries.combine(members)

    if data.window_start is not None or data.window_end is not None:
        start = data.window_start if data.window_start is not None else int(series.timestamps[0])
        end = data.window_end if data.window_end is not None else int(series.timestamps[-1]) + 1
        series = series.window(start, end)
    return series.aggregate()


def estimate_model(config: RunConfig) -> tuple[TransitionMatrix, StateSpace, np.ndarray, float]:
    aggregate = _load_aggregate(config)
    space, path = discretize(aggregate, config.data.n_states)
    p_bar = estimate_default_matrix(path, space.n)
    logger.info(f"🧮 기본 행렬 추정: n={p_bar.n}, 지지 밀도 {support_density(p_bar):.3f}")
    return p_bar, space, path, aggregate.interval_length


def _initial_distribution(config: RunConfig, n: int, path: Optional[np.ndarray]) -> np.ndarray:
    """설정값 > 상태 경로의 경험적 점유율 > 균등 분포"""
    if config.rho0 is not None:
        rho0 = np.asarray(config.rho0, dtype=float)
        if rho0.shape != (n,):
            raise ConfigError(f"expected {n} entries", field="rho0")
        return rho0
    if path is not None:
        return np.bincount(path, minlength=n) / path.size
    return np.full(n, 1.0 / n)


def build_instance(config: RunConfig) -> Instance:
    data = config.data
    if data.matrix_path:
        p_bar = load_matrix_json(data.matrix_path)
        space = load_state_space_csv(data.state_space_path)
        if space.n != p_bar.n:
            raise DataError(f"state space has {space.n} states, matrix has {p_bar.n}")
        path, interval_s = None, float(data.interval_s)
    else:
        p_bar, space, path, interval_s = estimate_model(config)

    ev = config.event
    tariff = load_tariff_csv(ev.tariff_csv) if ev.tariff_csv else ev.tariff
    event = DrEvent(ev.start, ev.end, ev.lead_time, ev.incentive, tariff)
    event.validate(config.horizon)

    rho0 = _initial_distribution(config, p_bar.n, path)
    baseline = baseline_power_at_start(p_bar, rho0, space, event)
    utility = build_utility_schedule(space, event, config.horizon, baseline_power=baseline,
                                     interval_s=interval_s)
    return Instance(p_bar, space, rho0, utility, event, interval_s, baseline, path)


# ===================================================================
# 🔒 사유 해
# ===================================================================

def private_solution(inst: Instance, config: RunConfig, method: str, k: float) -> PrivateSolution:
    gamma = config.gamma
    if method in ("taylor", "digamma"):
        policy, cost = stochastic_report(inst.p_bar, inst.utility, gamma, k, method, inst.rho0)
        return PrivateSolution(policy, cost)

    privacy = config.privacy
    if privacy.n_samples is None:
        raise ConfigError("required for the average method", field="privacy.n_samples")
    nonprivate, z = solve(inst.p_bar, inst.utility, gamma)
    samples = sample_private_policies(inst.p_bar, inst.utility, gamma, None, k, privacy.n_samples,
                                      stage_seed(config.seed, f"average/k={k:g}"))
    policy = mean_policy(samples)
    expected = expected_policy_analytical(inst.p_bar, z, k, privacy.denominators)
    cost = expected_cost_analytical(inst.p_bar, z, z, gamma, k, expected, inst.rho0,
                                    privacy.entropy_rule, privacy.denominators, samples)
    cost.realized_gap = (evaluate_objective(policy, inst.p_bar, inst.utility, inst.rho0, gamma)
                         - evaluate_objective(nonprivate, inst.p_bar, inst.utility, inst.rho0, gamma))
    summary = sample_summary(samples, inst.p_bar, z, privacy.denominators)
    logger.info(f"🎲 평균 정책 vs 해석적 기대 정책 최대 L1 차이 {summary.l1_gap:.4g}")
    return PrivateSolution(policy, cost, summary)


def privacy_accounting(inst: Instance, config: RunConfig, k: float) -> PrivacyReport:
    privacy = config.privacy
    params = PrivacyParams(k, privacy.h, delta=privacy.delta, psi=privacy.psi)
    return matrix_privacy_report(inst.p_bar, params, privacy.accounting_samples,
                                 stage_seed(config.seed, f"privacy/k={k:g}"),
                                 privacy.omega, privacy.omega_bar, privacy.w_size)


# ===================================================================
# 📈 plotdata
# ===================================================================

@dataclass
class AdjacentRow:
    """인접 입력 비교에 쓰는 행 β, 상위 3 목적지, h/2 를 옮기는 (source → target)"""
    beta: int
    top: np.ndarray
    source: int
    target: int


def adjacent_row(p_bar: TransitionMatrix, h: float) -> Optional[AdjacentRow]:
    """지지집합이 가장 큰 행에서 가장 큰 성분 → 두 번째 성분, 3 성분 행이 없으면 None"""
    sizes = p_bar.support_mask.sum(axis=1)
    beta = int(np.argmax(sizes))
    if sizes[beta] < 3:
        return None
    order = np.argsort(p_bar.rows[beta])
    source, target = int(order[-1]), int(order[-2])
    if p_bar.rows[beta, source] < h / 2:
        return None
    return AdjacentRow(beta, np.sort(order[-3:]), source, target)


def policy_scatter_frame(inst: Instance, config: RunConfig, method: str, k: float) -> Optional[pd.DataFrame]:
    """
    ζ = P̄[β] 와 인접 η 에 대한 사유 정책 행 P̃_t[β] (t = 이벤트 시작)
    상위 3 목적지로 제한해 재정규화한 단체 좌표
    average 는 표본 정책마다 한 점과 평균 한 점, 확률적 방법은 입력마다 한 점
    """
    h = config.privacy.h
    pick = adjacent_row(inst.p_bar, h)
    if pick is None:
        return None
    beta, top = pick.beta, pick.top
    t = min(inst.event.start, config.horizon - 2)
    inputs = {"zeta": inst.p_bar, "eta": adjacent_matrix(inst.p_bar, beta, h, pick.source, pick.target)}

    frames = []
    for name, matrix in inputs.items():
        if method == "average":
            samples = sample_private_policies(matrix, inst.utility, config.gamma, None, k, SCATTER_SAMPLES,
                                              stage_seed(config.seed, f"scatter/{name}/k={k:g}"))
            points = np.vstack([samples.matrices[:, t, beta][:, top],
                                mean_policy(samples).matrices[t, beta][top]])
            kinds = ["sample"] * SCATTER_SAMPLES + ["mean"]
        else:
            policy, _, _ = solve_private_method(matrix, inst.utility, config.gamma, k, method)
            points = policy.matrices[t, beta][top][np.newaxis]
            kinds = ["policy"]
        points = points / points.sum(axis=1, keepdims=True)
        frames.append(pd.DataFrame({
            "input": name,
            "kind": kinds,
            "point": np.arange(len(kinds)),
            "x0": points[:, 0],
            "x1": points[:, 1],
            "x2": points[:, 2],
        }))
    frame = pd.concat(frames, ignore_index=True)
    frame.insert(0, "row", beta)
    frame.insert(1, "t", t)
    return frame


def power_vs_time_frame(trajectories) -> pd.DataFrame:
    frame = pd.DataFrame({"t": np.arange(len(trajectories[0]))})
    for traj in trajectories:
        frame[traj.name] = traj.expected_power
    return frame


def cost_vs_k_frame(inst: Instance, config: RunConfig, methods: list[str], k_values: list[float],
                    default_traj) -> pd.DataFrame:
    """방법 x k 격자의 (ε, δ), 총 프라이버시 비용, 이벤트 구간 평균 감축량"""
    accounting = {k: privacy_accounting(inst, config, k) for k in k_values}
    rows = []
    grid = [(method, k) for method in methods for k in k_values]
    for method, k in track(grid, description="k sweep", transient=True):
        solution = private_solution(inst, config, method, k)
        traj = simulate_event(activate(solution.policy, inst.p_bar, inst.event), inst.rho0, inst.space, method)
        reduction = default_traj.expected_power - traj.expected_power
        rows.append({
            "method": method,
            "k": k,
            "epsilon": accounting[k].epsilon,
            "delta": accounting[k].delta,
            "total_cost": solution.cost.total,
            "event_mean_reduction_mw": float(reduction[inst.event.start:inst.event.end].mean()),
        })
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


# ===================================================================
# 🚀 명령
# ===================================================================

def cmd_estimate(config: RunConfig) -> tuple[TransitionMatrix, StateSpace, Manifest]:
    writer = BundleWriter(config.output_dir)
    p_bar, space, _, _ = estimate_model(config)
    writer.record("matrix.json", "MatrixFile", save_matrix_json(p_bar, writer.out_dir / "matrix.json"))
    writer.record("state_space.csv", None, save_state_space_csv(space, writer.out_dir / "state_space.csv"))
    manifest = writer.finish("estimate", config.seed)
    logger.success(f"✅ 행렬 저장 완료: {writer.out_dir / 'matrix.json'}")
    return p_bar, space, manifest


def _policy_file(policy: Policy, method: Optional[str] = None, k: Optional[float] = None) -> PolicyFile:
    return PolicyFile(gamma=policy.gamma, T=policy.horizon, matrices=policy.matrices.tolist(),
                      method=method, k=k)


def _default_trajectory(inst: Instance, config: RunConfig):
    return simulate_event(Policy.constant(inst.p_bar, config.horizon, config.gamma), inst.rho0, inst.space,
                          "default")


def _check_average_samples(config: RunConfig, methods) -> None:
    if "average" in methods and config.privacy.n_samples is None:
        raise ConfigError("required for the average method", field="privacy.n_samples")


def cmd_run(config: RunConfig) -> RunResult:
    privacy = config.privacy
    _check_average_samples(config, [privacy.method])
    out_dir = ensure_dir(config.output_dir)
    inst = build_instance(config)

    nonprivate, _ = solve(inst.p_bar, inst.utility, config.gamma)
    report = privacy_accounting(inst, config, privacy.k)
    private = private_solution(inst, config, privacy.method, privacy.k)

    private_name = f"private_{privacy.method}"
    default_traj = _default_trajectory(inst, config)
    nonprivate_traj = simulate_event(activate(nonprivate, inst.p_bar, inst.event), inst.rho0, inst.space,
                                     "nonprivate")
    private_traj = simulate_event(activate(private.policy, inst.p_bar, inst.event), inst.rho0, inst.space,
                                  private_name)
    trajectories = [default_traj, nonprivate_traj, private_traj]
    metrics = metrics_report(default_traj, {"nonprivate": nonprivate_traj, private_name: private_traj},
                             inst.event, reference="nonprivate")

    writer = BundleWriter(out_dir)
    writer.json("policy_nonprivate.json", _policy_file(nonprivate), "PolicyFile")
    writer.json("policy_private.json", _policy_file(private.policy, privacy.method, privacy.k), "PolicyFile")
    writer.json("privacy_report.json", report, "PrivacyReport")
    writer.json("cost_report.json", CostReportFile.model_validate(private.cost.to_dict()), "CostReportFile")
    writer.csv("trajectories.csv", trajectories_frame(trajectories))
    writer.json("metrics.json", metrics, "MetricsReport")
    if private.summary is not None:
        writer.json("sample_summary.json", private.summary, "SampleSetSummary")

    writer.csv("plotdata/power_vs_time.csv", power_vs_time_frame(trajectories))
    writer.csv("plotdata/cost_vs_k.csv",
               cost_vs_k_frame(inst, config, [privacy.method], config.sweep.k_values, default_traj))
    scatter = policy_scatter_frame(inst, config, privacy.method, privacy.k)
    if scatter is not None:
        writer.csv("plotdata/policy_scatter.csv", scatter)

    manifest = writer.finish("run", config.seed)
    logger.success(f"✅ 번들 저장 완료: {out_dir}")
    return RunResult(out_dir, nonprivate, private, report, metrics, manifest)


def cmd_sweep(config: RunConfig) -> pd.DataFrame:
    """k 격자 x 방법 → cost_vs_k.csv"""
    sweep = config.sweep
    _check_average_samples(config, sweep.methods)
    out_dir = ensure_dir(config.output_dir)
    inst = build_instance(config)
    frame = cost_vs_k_frame(inst, config, sweep.methods, sweep.k_values, _default_trajectory(inst, config))

    writer = BundleWriter(out_dir)
    writer.csv("cost_vs_k.csv", frame)
    writer.finish("sweep", config.seed)
    logger.success(f"✅ sweep 저장 완료: {out_dir / 'cost_vs_k.csv'}")
    return frame
