import numpy as np
import pytest

from conftest import random_instance
from src.errors import ParameterError, SupportError
from src.lsmdp_core import row_kl, solve
from src.models import ExpectedLogMatrix, TransitionMatrix, UtilitySchedule
from src.private_policies import (
    cost_of_privacy_stochastic,
    expected_log,
    expected_log_digamma,
    expected_log_exact,
    expected_log_monte_carlo,
    expected_log_taylor,
    solve_private,
    solve_private_method,
    stochastic_report,
)


def test_taylor_formula_by_hand(three_state):
    elog = expected_log_taylor(three_state, 50.0)
    p = three_state.rows[0, 0]
    assert elog.values[0, 0] == pytest.approx(np.log(p) - (1 - p) / (2 * p * 51.0))
    assert elog.method == "taylor"


def test_expected_logs_lie_below_log_p(three_state):
    log_p = three_state.log_rows()
    for method in ("taylor", "digamma"):
        assert np.all(expected_log(three_state, 25.0, method).values < log_p)


def test_unknown_method(three_state):
    with pytest.raises(ParameterError):
        expected_log(three_state, 50.0, "laplace")


@pytest.mark.slow
def test_digamma_matches_monte_carlo(three_state):
    mc, stderr = expected_log_monte_carlo(three_state, 50.0, 100_000, seed=21)
    exact = expected_log_digamma(three_state, 50.0)
    assert np.all(np.abs(exact.values - mc.values) <= 3 * stderr + 1e-12)


def test_taylor_close_to_digamma_for_moderate_entries():
    rows = np.array([[0.05, 0.45, 0.5], [0.3, 0.3, 0.4], [0.9, 0.05, 0.05]])
    p_bar = TransitionMatrix(rows, np.ones((3, 3), dtype=bool))
    for k in (50.0, 100.0, 200.0):
        gap = np.abs(expected_log_taylor(p_bar, k).values - expected_log_digamma(p_bar, k).values)
        assert gap.max() < 0.05


def test_exact_expected_log_reproduces_nonprivate(rng):
    p_bar, u, gamma = random_instance(rng, 4, 6)
    nonprivate, _ = solve(p_bar, u, gamma)
    private, _ = solve_private(p_bar, u, gamma, None, expected_log_exact(p_bar))
    np.testing.assert_allclose(private.matrices, nonprivate.matrices, atol=1e-12, rtol=0)


def test_closed_form_matches_backward_evaluation(rng):
    for i in range(50):
        n = int(rng.integers(2, 6))
        horizon = int(rng.integers(2, 8))
        p_bar, u, gamma = random_instance(rng, n, horizon, scale=3.0)
        method = ("taylor", "digamma")[i % 2]
        k = float(rng.choice([25.0, 50.0, 200.0]))
        _, report = stochastic_report(p_bar, u, gamma, k, method)
        assert report.cross_check_max_abs <= 1e-8


def test_cost_is_nonnegative(rng):
    for _ in range(20):
        p_bar, u, gamma = random_instance(rng, 4, 5, scale=2.0)
        for method in ("taylor", "digamma"):
            _, report = stochastic_report(p_bar, u, gamma, 50.0, method)
            assert np.all(report.delta_c >= -1e-12)
            assert report.realized_gap >= -1e-12


def test_last_step_cost_is_kl_to_optimal(rng):
    p_bar, u, gamma = random_instance(rng, 3, 4)
    nonprivate = solve(p_bar, u, gamma)
    policy, z_tilde, elog = solve_private_method(p_bar, u, gamma, 50.0, "digamma")
    report = cost_of_privacy_stochastic(p_bar, u, gamma, 4, elog, (policy, z_tilde), nonprivate)
    kl = row_kl(policy.matrices[-1], nonprivate[0].matrices[-1])
    np.testing.assert_allclose(report.delta_c[-1], gamma * kl, atol=1e-10)


def test_total_uses_initial_distribution(three_state):
    u = UtilitySchedule(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, -1.0], [2.0, 0.0, -2.0]]))
    rho0 = np.array([1.0, 0.0, 0.0])
    _, report = stochastic_report(three_state, u, 1.0, 50.0, "taylor", rho0)
    assert report.total == pytest.approx(report.delta_c[0, 0])


@pytest.mark.parametrize("method", ["taylor", "digamma"])
def test_cost_decreases_with_k(three_state, method):
    u = UtilitySchedule(np.array([[0.0, 0.0, 0.0], [3.0, 1.0, -2.0], [1.0, 0.0, -1.0], [4.0, 0.0, -4.0]]))
    totals = [stochastic_report(three_state, u, 1.0, k, method)[1].total for k in (25, 50, 100, 200)]
    assert all(a > b for a, b in zip(totals, totals[1:]))
    assert totals[-1] > 0


def test_support_mismatch(three_state):
    values = three_state.log_rows().copy()
    values[0, 2] = -np.inf
    elog = ExpectedLogMatrix(values, "taylor", 50.0)
    with pytest.raises(SupportError):
        solve_private(three_state, UtilitySchedule.zeros(3, 3), 1.0, None, elog)


def test_horizon_mismatch(three_state):
    with pytest.raises(ParameterError):
        solve_private(three_state, UtilitySchedule.zeros(3, 3), 1.0, 5, expected_log_exact(three_state))


@pytest.mark.parametrize("method", ["taylor", "digamma"])
def test_private_policy_converges_to_nonprivate(rng, method):
    p_bar, u, gamma = random_instance(rng, 4, 6, scale=2.0)
    nonprivate, _ = solve(p_bar, u, gamma)
    gaps = []
    for k in (1e2, 1e4, 1e6):
        policy, _, _ = solve_private_method(p_bar, u, gamma, k, method)
        gaps.append(float(np.abs(policy.matrices - nonprivate.matrices).max()))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4


def test_cost_ordering_taylor_below_digamma(three_state):
    u = UtilitySchedule(np.array([[0.0, 0.0, 0.0], [3.0, 1.0, -2.0], [1.0, 0.0, -1.0], [4.0, 0.0, -4.0]]))
    for k in (25.0, 50.0, 100.0, 200.0):
        taylor = stochastic_report(three_state, u, 1.0, k, "taylor")[1]
        digamma = stochastic_report(three_state, u, 1.0, k, "digamma")[1]
        assert 0 < taylor.total <= digamma.total
        assert np.all(expected_log_digamma(three_state, k).values < expected_log_taylor(three_state, k).values)
