from pathlib import Path

import numpy as np
import pytest

from src.average_value import (
    adjacent_policy_distance,
    analytical_row_sums,
    expected_cost_analytical,
    expected_policy_analytical,
    mean_policy,
    monte_carlo_cost,
    sample_private_policies,
    sample_summary,
)
from src.config import load_config
from src.errors import ParameterError
from src.lsmdp_core import propagate_array, row_kl, solve
from src.models import PolicySampleSet, TransitionMatrix, UtilitySchedule
from src.pipeline import adjacent_row, build_instance, private_solution

CASE_STUDY = Path(__file__).resolve().parents[1] / "config" / "case_study.json"


@pytest.fixture
def mild_utility():
    # T=3: t=0 행에서는 표본별 z̃_j 가 명목 z 와 다름
    return UtilitySchedule(np.array([[0.0, 0.0, 0.0], [0.2, 0.0, -0.2], [0.3, 0.0, -0.3]]))


@pytest.fixture
def long_utility():
    return UtilitySchedule(np.array([
        [0.0, 0.0, 0.0],
        [0.5, 0.2, -0.3],
        [0.1, -0.2, 0.4],
        [1.0, 0.0, -1.0],
    ]))


@pytest.fixture
def banded():
    """0 ↔ 2 로 바로 갈 수 없는 3 상태 행렬"""
    rows = np.array([[0.5, 0.5, 0.0], [0.3, 0.4, 0.3], [0.0, 0.4, 0.6]])
    return TransitionMatrix(rows, rows > 0)


def test_sampling_is_deterministic_and_worker_independent(three_state, long_utility):
    a = sample_private_policies(three_state, long_utility, 1.0, None, 50.0, 150, seed=3, workers=1)
    b = sample_private_policies(three_state, long_utility, 1.0, None, 50.0, 150, seed=3, workers=4)
    assert np.array_equal(a.matrices, b.matrices)
    assert a.n_samples == 150
    np.testing.assert_allclose(mean_policy(a).matrices.sum(axis=-1), 1.0, atol=1e-12)


def test_sampling_rejects_bad_arguments(three_state, long_utility):
    with pytest.raises(ParameterError):
        sample_private_policies(three_state, long_utility, 1.0, None, 50.0, 0, seed=1)
    with pytest.raises(ParameterError):
        sample_private_policies(three_state, long_utility, 1.0, 7, 50.0, 10, seed=1)


def test_termwise_row_sums_exceed_one_and_shrink_with_k(three_state, long_utility):
    _, z = solve(three_state, long_utility, 1.0)
    sums = [analytical_row_sums(three_state, z, k) for k in (1.0, 5.0, 50.0, 500.0)]
    for s in sums:
        assert np.all(s >= 1.0)
    drifts = [float(np.max(s - 1.0)) for s in sums]
    assert drifts[0] > drifts[1] > drifts[2] > drifts[3] > 0
    assert drifts[3] < 1e-2


def test_normalizer_row_sums_are_exact(three_state, long_utility):
    _, z = solve(three_state, long_utility, 1.0)
    for k in (10.0, 50.0, 200.0):
        np.testing.assert_allclose(analytical_row_sums(three_state, z, k, "normalizer"), 1.0, atol=1e-12)


def test_unknown_denominator_rule(three_state, long_utility):
    _, z = solve(three_state, long_utility, 1.0)
    with pytest.raises(ParameterError):
        expected_policy_analytical(three_state, z, 50.0, "printed")


@pytest.mark.parametrize("denominators", ["termwise", "normalizer"])
def test_expected_policy_tends_to_nonprivate(three_state, long_utility, denominators):
    nonprivate, z = solve(three_state, long_utility, 1.0)
    gaps = [np.abs(expected_policy_analytical(three_state, z, k, denominators).matrices
                   - nonprivate.matrices).max()
            for k in (50.0, 500.0, 5000.0)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_large_utility_does_not_underflow(banded):
    # 상태 0 의 desirability 가 e^800 배: 상태 0 으로 갈 수 없는 행 2 도 유한해야 함
    u = UtilitySchedule(np.array([[0.0, 0.0, 0.0], [800.0, 0.0, -5.0]]))
    nonprivate, z = solve(banded, u, 1.0)
    for denominators in ("termwise", "normalizer"):
        policy = expected_policy_analytical(banded, z, 50.0, denominators)
        assert np.all(np.isfinite(policy.matrices))
        assert np.all(np.isfinite(analytical_row_sums(banded, z, 50.0, denominators)))
        np.testing.assert_allclose(policy.matrices[0, 2], nonprivate.matrices[0, 2], atol=0.05)
    report = expected_cost_analytical(banded, z, z, 1.0, 50.0, expected_policy_analytical(banded, z, 50.0))
    assert np.all(np.isfinite(report.delta_c))


def test_case_study_with_large_incentive_runs_average():
    config = load_config(CASE_STUDY)
    config.event.incentive = 200.0
    config.event.tariff = 60.0
    config.privacy.n_samples = 32
    inst = build_instance(config)
    solution = private_solution(inst, config, "average", 50.0)
    assert np.all(np.isfinite(solution.policy.matrices))
    assert np.isfinite(solution.cost.total)
    assert np.all(np.isfinite(np.asarray(solution.summary.analytical_policy)))
    assert np.all(np.asarray(solution.summary.row_sum_diagnostics) >= 1.0 - 1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("denominators", ["termwise", "normalizer"])
def test_expected_policy_matches_sample_mean(three_state, mild_utility, denominators):
    _, z = solve(three_state, mild_utility, 1.0)
    samples = sample_private_policies(three_state, mild_utility, 1.0, None, 50.0, 100_000, seed=8)
    analytical = expected_policy_analytical(three_state, z, 50.0, denominators)
    l1 = np.abs(mean_policy(samples).matrices - analytical.matrices).sum(axis=-1)
    assert l1.shape == (2, 3)
    assert l1.max() <= 0.01


@pytest.mark.slow
def test_expected_cost_delta_rule_against_monte_carlo(three_state, mild_utility):
    _, z = solve(three_state, mild_utility, 1.0)
    samples = sample_private_policies(three_state, mild_utility, 1.0, None, 50.0, 100_000, seed=9)
    expected = expected_policy_analytical(three_state, z, 50.0, "normalizer")
    report = expected_cost_analytical(three_state, z, z, 1.0, 50.0, expected, entropy_rule="delta",
                                      denominators="normalizer", samples=samples)
    extras = report.extras
    lower, upper = extras["monte_carlo_ci95"]
    assert lower <= extras["monte_carlo_total"] <= upper
    assert extras["within_ci95"] == (lower <= report.total <= upper)
    # 2차 전개 오차 10% 에 Monte Carlo 3 표준오차를 더한 허용치
    gap = extras["analytical_minus_monte_carlo"]
    assert abs(gap) <= 0.1 * extras["monte_carlo_total"] + 3 * extras["monte_carlo_stderr"]


@pytest.mark.slow
def test_expected_cost_quadratic_rule_reports_gap(three_state, mild_utility):
    _, z = solve(three_state, mild_utility, 1.0)
    samples = sample_private_policies(three_state, mild_utility, 1.0, None, 50.0, 100_000, seed=9)
    expected = expected_policy_analytical(three_state, z, 50.0)
    report = expected_cost_analytical(three_state, z, z, 1.0, 50.0, expected, samples=samples)
    extras = report.extras
    assert extras["analytical_minus_monte_carlo"] == pytest.approx(report.total - extras["monte_carlo_total"])
    # x log x ≈ x² - x 는 E[P̃ log P̃] 를 과대평가
    assert extras["analytical_minus_monte_carlo"] > 3 * extras["monte_carlo_stderr"]
    assert not extras["within_ci95"]


def test_monte_carlo_cost_uses_sample_desirability(three_state, mild_utility):
    _, z = solve(three_state, mild_utility, 1.0)
    samples = sample_private_policies(three_state, mild_utility, 1.0, None, 50.0, 40, seed=2)
    per_sample = monte_carlo_cost(three_state, z, 1.0, samples)
    assert per_sample.shape == (40, 2, 3)

    shifted = PolicySampleSet(samples.matrices, samples.draws, samples.log_z + 0.7, samples.gamma,
                              samples.support_mask, samples.k, samples.seed)
    np.testing.assert_allclose(monte_carlo_cost(three_state, z, 1.0, shifted), per_sample - 0.7, atol=1e-12)

    # t=0 의 연속값은 표본 자신의 z̃_{j,1}
    log_z1 = samples.log_z[:, 1]
    nominal = np.log(np.exp(three_state.log_rows()[np.newaxis] + z.log_z[1][np.newaxis, np.newaxis]).sum(axis=-1))
    mats = samples.matrices[:, 0]
    direct = np.sum(mats * (np.log(mats) - three_state.log_rows() - log_z1[:, np.newaxis, :]), axis=-1) + nominal
    np.testing.assert_allclose(per_sample[:, 0], direct, atol=1e-10)


def test_monte_carlo_cost_is_kl_at_last_step(three_state, mild_utility):
    nonprivate, z = solve(three_state, mild_utility, 1.0)
    samples = sample_private_policies(three_state, mild_utility, 1.0, None, 50.0, 40, seed=2)
    per_sample = monte_carlo_cost(three_state, z, 1.0, samples)
    kl = row_kl(samples.matrices[:, -1], nonprivate.matrices[-1][np.newaxis])
    np.testing.assert_allclose(per_sample[:, -1], kl, atol=1e-10)
    assert np.all(per_sample[:, -1] >= -1e-12)


def test_expected_cost_sums_over_horizon(three_state, long_utility):
    _, z = solve(three_state, long_utility, 1.0)
    samples = sample_private_policies(three_state, long_utility, 1.0, None, 50.0, 200, seed=4)
    expected = expected_policy_analytical(three_state, z, 50.0)
    rho0 = np.array([0.2, 0.5, 0.3])
    report = expected_cost_analytical(three_state, z, z, 1.0, 50.0, expected, rho0, samples=samples)
    assert report.method == "average"
    assert report.delta_c.shape == (3, 3)
    assert set(report.extras) == {"monte_carlo_total", "monte_carlo_stderr", "monte_carlo_ci95",
                                  "analytical_minus_monte_carlo", "within_ci95"}

    rho = propagate_array(expected.matrices, rho0)[:-1]
    assert report.total == pytest.approx(float(np.sum(rho * report.delta_c)))
    per_sample = monte_carlo_cost(three_state, z, 1.0, samples)
    assert report.extras["monte_carlo_total"] == pytest.approx(float(np.mean(np.sum(per_sample * rho, axis=(1, 2)))))


def test_expected_cost_limits_for_large_k(three_state, long_utility):
    nonprivate, z = solve(three_state, long_utility, 1.0)
    k = 1e8
    expected = expected_policy_analytical(three_state, z, k)
    delta = expected_cost_analytical(three_state, z, z, 1.0, k, expected, entropy_rule="delta")
    assert abs(delta.total) < 1e-6

    # x log x ≈ x² - x 는 k → ∞ 에서 Σ π(π - 1 - log π) 로 수렴
    quadratic = expected_cost_analytical(three_state, z, z, 1.0, k, expected)
    pi = nonprivate.matrices
    floor = np.sum(pi * (pi - 1.0 - np.log(pi)), axis=-1)
    rho = propagate_array(pi, np.full(3, 1 / 3))[:-1]
    assert quadratic.total == pytest.approx(float(np.sum(rho * floor)), rel=1e-5)
    assert quadratic.total > 0


def test_unknown_entropy_rule(three_state, long_utility):
    _, z = solve(three_state, long_utility, 1.0)
    expected = expected_policy_analytical(three_state, z, 50.0)
    with pytest.raises(ParameterError):
        expected_cost_analytical(three_state, z, z, 1.0, 50.0, expected, entropy_rule="cubic")


@pytest.mark.slow
def test_mean_policy_error_shrinks_as_inverse_sqrt_n(three_state, mild_utility):
    def _gap(n: int, rep: int) -> float:
        a = sample_private_policies(three_state, mild_utility, 1.0, None, 50.0, n, seed=1000 * rep + 1)
        b = sample_private_policies(three_state, mild_utility, 1.0, None, 50.0, 4 * n, seed=1000 * rep + 2)
        return float(np.abs(mean_policy(a).matrices - mean_policy(b).matrices).sum())

    for n in (100, 1000, 10_000):
        coarse = np.mean([_gap(n, rep) for rep in range(8)])
        fine = np.mean([_gap(4 * n, rep) for rep in range(8)])
        assert 1.5 <= coarse / fine <= 2.5


@pytest.mark.parametrize("method", ["taylor", "digamma", "average"])
@pytest.mark.parametrize("k", [50.0, 200.0])
def test_adjacent_inputs_give_close_policies(method, k):
    rows = np.array([
        [0.4, 0.3, 0.2, 0.1],
        [0.25, 0.35, 0.25, 0.15],
        [0.1, 0.3, 0.4, 0.2],
        [0.1, 0.2, 0.3, 0.4],
    ])
    p_bar = TransitionMatrix(rows, np.ones((4, 4), dtype=bool))
    u = UtilitySchedule(np.random.default_rng(1).uniform(-1, 1, size=(6, 4)))
    distance = adjacent_policy_distance(p_bar, u, 15.0, 1, 0.03, 1, 3, method, k)
    assert 0 < distance <= 0.06


@pytest.fixture(scope="module")
def case_study():
    config = load_config(CASE_STUDY)
    return config, build_instance(config)


@pytest.mark.slow
@pytest.mark.parametrize("method", ["taylor", "digamma", "average"])
@pytest.mark.parametrize("k", [50.0, 200.0])
def test_adjacent_inputs_on_case_study(case_study, method, k):
    config, inst = case_study
    pick = adjacent_row(inst.p_bar, config.privacy.h)
    distance = adjacent_policy_distance(inst.p_bar, inst.utility, config.gamma, pick.beta, config.privacy.h,
                                        pick.source, pick.target, method, k, t=inst.event.start)
    assert 0 < distance <= 0.06


@pytest.mark.slow
def test_case_study_samples_spread(case_study):
    config, inst = case_study
    samples = sample_private_policies(inst.p_bar, inst.utility, config.gamma, None, 50.0, 1000, seed=5)
    assert samples.matrices.shape == (1000, config.horizon - 1, 20, 20)
    np.testing.assert_allclose(samples.matrices.sum(axis=-1), 1.0, atol=1e-10)
    assert not np.any(samples.matrices[:, :, ~inst.p_bar.support_mask] > 0)
    spread = np.abs(samples.matrices[1:] - samples.matrices[0]).sum(axis=-1).max()
    assert spread > 0


def test_sample_summary(three_state, long_utility):
    _, z = solve(three_state, long_utility, 1.0)
    samples = sample_private_policies(three_state, long_utility, 1.0, None, 50.0, 300, seed=6)
    summary = sample_summary(samples, three_state, z)
    assert summary.N == 300
    assert summary.k == 50.0
    assert len(summary.mean_policy) == 3
    assert np.all(np.asarray(summary.row_sum_diagnostics) > 1.0)
    assert 0 <= summary.l1_gap < 0.2
