# src/private_policies.py
"""
확률적 접근(stochastic approach)의 사유 최적 정책과 프라이버시 비용

기본 행렬 대신 유효 가중치 W = exp(E[log P̃]) 를 desirability 재귀에 넣습니다.
W 의 행 합은 1 보다 작지만 재귀 안에서는 정규화하지 않고, 출력 정책 행만 정규화합니다.
"""
from typing import Optional

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from .dirichlet_privacy import SeedLike, digamma, draw_dirichlet
from .errors import CrossCheckError, ParameterError, SupportError
from .lsmdp_core import backward_log_z, evaluate_objective, policy_matrices, solve
from .models import CostReport, Desirability, ExpectedLogMatrix, Policy, TransitionMatrix, UtilitySchedule

TAYLOR_SMALL_ENTRY = 1e-6
TAYLOR_CLAMP = -30.0
CROSS_CHECK_TOL = 1e-8

METHODS = ("taylor", "digamma")


def _supported_entries(p_bar: TransitionMatrix, k: Optional[float]) -> np.ndarray:
    if k is not None and not k > 0:
        raise ParameterError("k must be > 0", field="k")
    p = p_bar.rows[p_bar.support_mask]
    if np.any(p <= 0):
        raise ParameterError("supported entries of the default matrix must be > 0", field="p_bar")
    return p


def _on_support(p_bar: TransitionMatrix, values: np.ndarray) -> np.ndarray:
    out = np.full(p_bar.rows.shape, -np.inf)
    out[p_bar.support_mask] = values
    return out


# ===================================================================
# 📐 E[log P̃] 계산
# ===================================================================

def expected_log_taylor(p_bar: TransitionMatrix, k: float) -> ExpectedLogMatrix:
    """E[log P̃] ≈ log P̄ - (1-P̄)/(2·P̄·(k+1))"""
    p = _supported_entries(p_bar, k)
    correction = -(1.0 - p) / (2.0 * p * (k + 1.0))
    # P̄ → 0 에서 보정항이 발산하므로 아주 작은 성분만 -30 에서 자름
    correction = np.where(p < TAYLOR_SMALL_ENTRY, np.maximum(correction, TAYLOR_CLAMP), correction)
    return ExpectedLogMatrix(_on_support(p_bar, np.log(p) + correction), "taylor", k)


def expected_log_digamma(p_bar: TransitionMatrix, k: float) -> ExpectedLogMatrix:
    """E[log P̃] = ψ(k·P̄) - ψ(k)  (행 합이 1 이므로 ψ(kΣP̄) = ψ(k))"""
    p = _supported_entries(p_bar, k)
    values = np.atleast_1d(digamma(k * p)) - digamma(k)
    return ExpectedLogMatrix(_on_support(p_bar, values), "digamma", k)


def expected_log_exact(p_bar: TransitionMatrix) -> ExpectedLogMatrix:
    """잡음 없는 경우 (k → ∞): log P̄"""
    return ExpectedLogMatrix(p_bar.log_rows(), "exact", None)


def expected_log_monte_carlo(p_bar: TransitionMatrix, k: float, n_samples: int,
                             seed: SeedLike) -> tuple[ExpectedLogMatrix, np.ndarray]:
    """표본 평균 E[log P̃] 와 표준오차 (검증용 기준값)"""
    _supported_entries(p_bar, k)
    draws = draw_dirichlet(k * p_bar.rows, p_bar.support_mask, n_samples, seed)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(draws[:, p_bar.support_mask])  # (N, 지지 성분 수)
    logs = logs[np.all(np.isfinite(logs), axis=1)]
    stderr = np.zeros(p_bar.rows.shape)
    stderr[p_bar.support_mask] = logs.std(axis=0, ddof=1) / np.sqrt(logs.shape[0])
    return ExpectedLogMatrix(_on_support(p_bar, logs.mean(axis=0)), "monte_carlo", k), stderr


def expected_log(p_bar: TransitionMatrix, k: float, method: str) -> ExpectedLogMatrix:
    if method == "taylor":
        return expected_log_taylor(p_bar, k)
    if method == "digamma":
        return expected_log_digamma(p_bar, k)
    raise ParameterError(f"unknown stochastic method '{method}'", field="privacy.method")


# ===================================================================
# 🔒 사유 정책
# ===================================================================

def _check_support(p_bar: TransitionMatrix, elog: ExpectedLogMatrix) -> None:
    if not np.array_equal(elog.support_mask, p_bar.support_mask):
        raise SupportError("support mismatch between expected-log matrix and default matrix")


def solve_private(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float, horizon: Optional[int],
                  elog: ExpectedLogMatrix) -> tuple[Policy, Desirability]:
    """
    log z̃_t = U_t/γ + logsumexp_α(elog[β, α] + log z̃_{t+1}[α])
    P̃_t[β] = softmax_α(elog[β, α] + log z̃_{t+1}[α])
    """
    if horizon is not None and horizon != u.horizon:
        raise ParameterError(f"horizon {horizon} does not match utility length {u.horizon}", field="horizon")
    if not gamma > 0:
        raise ParameterError("gamma must be > 0", field="gamma")
    _check_support(p_bar, elog)
    log_z = backward_log_z(elog.values, u.values, gamma)
    mats = policy_matrices(elog.values, log_z)
    return Policy(mats, gamma, p_bar.support_mask), Desirability(log_z, gamma)


def solve_private_method(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float, k: float,
                         method: str) -> tuple[Policy, Desirability, ExpectedLogMatrix]:
    elog = expected_log(p_bar, k, method)
    policy, z_tilde = solve_private(p_bar, u, gamma, None, elog)
    logger.debug(f"사유 정책 계산 완료: method={method}, k={k}")
    return policy, z_tilde, elog


# ===================================================================
# 💸 프라이버시 비용
# ===================================================================

def _closed_form_delta_c(log_p: np.ndarray, elog: np.ndarray, private_mats: np.ndarray,
                         log_z: np.ndarray, log_z_tilde: np.ndarray, gamma: float) -> np.ndarray:
    """
    ΔC_t[β] = γ Σ_α P̃_t (elog - log P̄) + γ log Σ_α P̄ z_{t+1} - γ log Σ_α W z̃_{t+1}
    """
    support = np.isfinite(log_p)
    shift = np.where(support, elog - np.where(support, log_p, 0.0), 0.0)
    first = gamma * np.sum(private_mats * shift[np.newaxis], axis=-1)
    nominal = gamma * logsumexp(log_p[np.newaxis] + log_z[1:, np.newaxis, :], axis=-1)
    private = gamma * logsumexp(elog[np.newaxis] + log_z_tilde[1:, np.newaxis, :], axis=-1)
    return first + nominal - private


def _backward_delta_c(log_p: np.ndarray, private_mats: np.ndarray, log_z: np.ndarray,
                      log_z_tilde: np.ndarray, u: np.ndarray, gamma: float) -> np.ndarray:
    """
    φ̃_t = -U_t + Σ_α P̃_t (γ log P̃_t - γ log P̄ - γ log z̃_{t+1})
    φ_t  = -U_t - γ log Σ_α P̄ z_{t+1}
    """
    positive = private_mats > 0
    safe = np.where(positive, private_mats, 1.0)
    log_p_safe = np.where(np.isfinite(log_p), log_p, 0.0)
    inner = np.log(safe) - log_p_safe[np.newaxis] - log_z_tilde[1:, np.newaxis, :]
    phi_tilde = -u[:-1] + gamma * np.sum(np.where(positive, private_mats * inner, 0.0), axis=-1)
    phi = -u[:-1] - gamma * logsumexp(log_p[np.newaxis] + log_z[1:, np.newaxis, :], axis=-1)
    return phi_tilde - phi


def cost_of_privacy_stochastic(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float,
                               horizon: Optional[int], elog: ExpectedLogMatrix,
                               private_solution: tuple[Policy, Desirability],
                               nonprivate_solution: tuple[Policy, Desirability],
                               rho0=None) -> CostReport:
    """
    상태/시점별 프라이버시 비용 ΔC 와 초기 분포 기대값 total = Σ_β ρ0[β]·ΔC_0[β]
    닫힌 형태 결과를 역방향 평가와 대조하고, 1e-8 초과 차이는 CrossCheckError
    """
    if horizon is not None and horizon != u.horizon:
        raise ParameterError(f"horizon {horizon} does not match utility length {u.horizon}", field="horizon")
    _check_support(p_bar, elog)
    private_policy, z_tilde = private_solution
    nonprivate_policy, z = nonprivate_solution
    if z.log_z.shape != z_tilde.log_z.shape or z.log_z.shape != u.values.shape:
        raise ParameterError("private and non-private solutions must share the instance", field="solution")

    log_p = p_bar.log_rows()
    delta_c = _closed_form_delta_c(log_p, elog.values, private_policy.matrices, z.log_z, z_tilde.log_z, gamma)
    reference = _backward_delta_c(log_p, private_policy.matrices, z.log_z, z_tilde.log_z, u.values, gamma)
    mismatch = float(np.max(np.abs(delta_c - reference)))
    if mismatch > CROSS_CHECK_TOL:
        raise CrossCheckError(f"closed-form cost differs from backward evaluation by {mismatch:.3e}")

    rho0 = np.full(p_bar.n, 1.0 / p_bar.n) if rho0 is None else np.asarray(rho0, dtype=float)
    total = float(rho0 @ delta_c[0])
    realized_gap = (evaluate_objective(private_policy, p_bar, u, rho0, gamma)
                    - evaluate_objective(nonprivate_policy, p_bar, u, rho0, gamma))
    logger.info(f"💸 프라이버시 비용 ({elog.method}, k={elog.k}): total={total:.6g}, realized gap={realized_gap:.6g}")
    return CostReport(delta_c, total, elog.method, elog.k, realized_gap=float(realized_gap),
                      cross_check_max_abs=mismatch)


def stochastic_report(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float, k: float, method: str,
                      rho0=None) -> tuple[Policy, CostReport]:
    """비사유 해 → 사유 해 → 비용 보고서까지 한 번에"""
    nonprivate = solve(p_bar, u, gamma)
    policy, z_tilde, elog = solve_private_method(p_bar, u, gamma, k, method)
    report = cost_of_privacy_stochastic(p_bar, u, gamma, None, elog, (policy, z_tilde), nonprivate, rho0)
    return policy, report
