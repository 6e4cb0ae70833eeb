from pathlib import Path

import numpy as np
import pytest

from src.config import load_config
from src.dr_sim import (
    activate,
    baseline_power_at_start,
    build_utility_schedule,
    capacity_metrics,
    load_tariff_csv,
    metrics_report,
    simulate_event,
    trajectories_frame,
)
from src.errors import ParameterError, ParseError
from src.lsmdp_core import solve
from src.models import DrEvent, Policy, PowerTrajectory, StateSpace, TransitionMatrix
from src.pipeline import build_instance, private_solution

CASE_STUDY = Path(__file__).resolve().parents[1] / "config" / "case_study.json"


@pytest.fixture
def space():
    return StateSpace(np.array([0.0, 1.0, 2.0, 3.0]))  # 대표 전력 0.5 / 1.5 / 2.5 MW


def test_zero_prices_give_zero_utility(space):
    u = build_utility_schedule(space, DrEvent(3, 6), 8)
    assert np.all(u.values == 0)


def test_tariff_only_inside_active_window(space):
    event = DrEvent(4, 6, lead_time=2, tariff=40.0)
    u = build_utility_schedule(space, event, 8, interval_s=1800)
    assert np.all(u.values[:2] == 0)
    assert np.all(u.values[6:] == 0)
    np.testing.assert_allclose(u.values[2], -40.0 * space.representative_power * 0.5)


def test_incentive_makes_utility_nonincreasing_in_power(space):
    event = DrEvent(2, 5, lead_time=1, incentive=100.0, tariff=20.0)
    u = build_utility_schedule(space, event, 6, baseline_power=2.0)
    for t in range(2, 5):
        assert np.all(np.diff(u.values[t]) <= 0)
    assert u.values[2, 0] == pytest.approx(-20.0 * 0.5 * 0.25 + 100.0 * 1.5)


def test_incentive_needs_baseline(space):
    with pytest.raises(ParameterError):
        build_utility_schedule(space, DrEvent(2, 5, incentive=10.0), 6)


def test_event_outside_horizon(space):
    with pytest.raises(ParameterError):
        build_utility_schedule(space, DrEvent(2, 9), 6)


def test_identity_policy_is_flat(space):
    eye = TransitionMatrix(np.eye(3), np.eye(3, dtype=bool))
    traj = simulate_event(Policy.constant(eye, 5, 1.0), [0.0, 1.0, 0.0], space)
    np.testing.assert_allclose(traj.expected_power, 1.5)


def _default_matrix():
    rows = np.array([[0.6, 0.3, 0.1], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]])
    return TransitionMatrix(rows, np.ones((3, 3), dtype=bool))


def test_activate_uses_default_outside_window():
    p_bar = _default_matrix()
    event = DrEvent(3, 5, lead_time=1)
    mats = np.full((6, 3, 3), 1.0 / 3)
    activated = activate(Policy(mats, 1.0, p_bar.support_mask), p_bar, event)
    for t in (0, 1, 5):
        np.testing.assert_array_equal(activated.matrices[t], p_bar.rows)
    for t in (2, 3, 4):
        np.testing.assert_allclose(activated.matrices[t], 1.0 / 3)


def test_optimized_policy_curtails_during_event(space):
    p_bar = _default_matrix()
    rho0 = np.array([0.25, 0.5, 0.25])
    event = DrEvent(4, 7, lead_time=2, incentive=20.0, tariff=10.0)
    baseline_mw = baseline_power_at_start(p_bar, rho0, space, event)
    u = build_utility_schedule(space, event, 9, baseline_power=baseline_mw)
    policy, _ = solve(p_bar, u, 1.0)

    default = simulate_event(Policy.constant(p_bar, 9, 1.0), rho0, space, "default")
    controlled = simulate_event(activate(policy, p_bar, event), rho0, space, "nonprivate")
    np.testing.assert_allclose(controlled.expected_power[:3], default.expected_power[:3])
    window = slice(event.start, event.end)
    assert controlled.expected_power[window].mean() < default.expected_power[window].mean()


def test_baseline_power_with_stationary_start(space):
    rows = np.array([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])
    p_bar = TransitionMatrix(rows, np.ones((3, 3), dtype=bool))
    power = baseline_power_at_start(p_bar, np.full(3, 1 / 3), space, DrEvent(3, 5))
    assert power == pytest.approx(1.5)


def test_capacity_metrics_arithmetic():
    baseline = PowerTrajectory(np.full(8, 5.0), "default")
    assert capacity_metrics(baseline, baseline, DrEvent(2, 6)).peak_reduction_mw == 0.0

    controlled = PowerTrajectory(np.array([5, 5, 4, 4, 4, 4, 5, 5], dtype=float), "a")
    weaker = PowerTrajectory(np.array([5, 5, 4.5, 4.5, 4.5, 4.5, 5, 5]), "b")
    metrics = capacity_metrics(baseline, weaker, DrEvent(2, 6), reference=controlled)
    assert metrics.mean_reduction_mw == pytest.approx(0.5)
    assert metrics.capacity_ratio == pytest.approx(0.5)
    full = capacity_metrics(baseline, controlled, DrEvent(2, 6))
    assert full.mean_reduction_mw == pytest.approx(1.0)
    assert full.peak_reduction_mw == pytest.approx(1.0)
    assert full.capacity_ratio is None


def test_capacity_metrics_length_mismatch():
    with pytest.raises(ParameterError):
        capacity_metrics(PowerTrajectory(np.ones(5)), PowerTrajectory(np.ones(4)), DrEvent(1, 3))


def test_metrics_report_and_frame():
    baseline = PowerTrajectory(np.full(4, 2.0), "default")
    cut = PowerTrajectory(np.array([2.0, 1.0, 1.0, 2.0]), "nonprivate")
    report = metrics_report(baseline, {"nonprivate": cut}, DrEvent(1, 3), reference="nonprivate")
    assert report.scenarios["nonprivate"].capacity_ratio == pytest.approx(1.0)
    frame = trajectories_frame([baseline, cut])
    assert list(frame.columns) == ["scenario", "t", "expected_power_mw"]
    assert len(frame) == 8


def test_load_tariff_csv(write_text):
    prices = load_tariff_csv(write_text("t.csv", "t,price_per_mwh\n0,30\n1,45.5\n"))
    np.testing.assert_array_equal(prices, [30.0, 45.5])
    with pytest.raises(ParseError, match="row 2"):
        load_tariff_csv(write_text("bad.csv", "t,price_per_mwh\n0,30\n2,45\n"))


@pytest.fixture(scope="module")
def case_study_capacity():
    """config/case_study.json 의 방법 x k 별 이벤트 평균 감축량과 총 프라이버시 비용"""
    config = load_config(CASE_STUDY)
    inst = build_instance(config)
    window = slice(inst.event.start, inst.event.end)
    default = simulate_event(Policy.constant(inst.p_bar, config.horizon, config.gamma), inst.rho0, inst.space)

    def _reduction(policy):
        traj = simulate_event(activate(policy, inst.p_bar, inst.event), inst.rho0, inst.space)
        return float((default.expected_power - traj.expected_power)[window].mean())

    nonprivate, _ = solve(inst.p_bar, inst.utility, config.gamma)
    capacity, cost = {}, {}
    for method in ("taylor", "digamma", "average"):
        for k in config.sweep.k_values:
            solution = private_solution(inst, config, method, k)
            capacity[method, k] = _reduction(solution.policy)
            cost[method, k] = solution.cost.total
    return _reduction(nonprivate), capacity, cost, config.sweep.k_values


@pytest.mark.slow
def test_case_study_capacity_ordering(case_study_capacity):
    nonprivate, capacity, _, k_values = case_study_capacity
    assert nonprivate > 0
    for k in k_values:
        taylor, digamma, average = (capacity[m, k] for m in ("taylor", "digamma", "average"))
        for value in (taylor, digamma, average):
            assert 0 < value <= nonprivate + 1e-9
        assert abs(taylor - digamma) <= 0.02 * max(taylor, digamma)
        assert average < min(taylor, digamma)
    # 포화되지 않은 설정이어야 k 에 따른 차이가 보임
    assert capacity["digamma", k_values[0]] < 0.99 * nonprivate


@pytest.mark.slow
def test_case_study_capacity_and_cost_trends_in_k(case_study_capacity):
    _, capacity, cost, k_values = case_study_capacity
    for method in ("taylor", "digamma"):
        extracted = [capacity[method, k] for k in k_values]
        assert all(a <= b + 1e-9 for a, b in zip(extracted, extracted[1:]))
        assert extracted[0] < extracted[-1]
    for method in ("taylor", "digamma", "average"):
        totals = [cost[method, k] for k in k_values]
        assert all(a > b for a, b in zip(totals, totals[1:]))
    for k in k_values:
        assert cost["taylor", k] <= cost["digamma", k] <= cost["average", k]
