# src/lsmdp_core.py
"""
선형 해법 MDP (LS-MDP) 핵심 연산
- desirability 역방향 재귀 (log 영역, logsumexp)
- 최적 정책 추출, 분포 전파, 목적함수 평가

배치 커널(backward_log_z, policy_matrices)은 앞쪽에 배치 축을 허용해서
여러 개의 사유화 행렬을 한 번에 풀 수 있습니다.
"""
from typing import Optional

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from .errors import DriftError, ParameterError, SupportError
from .models import (
    Desirability,
    DistributionTrajectory,
    Policy,
    TransitionMatrix,
    UtilitySchedule,
)

RHO_DRIFT_TOL = 1e-9


def _check_instance(n: int, u: UtilitySchedule, gamma: float, horizon: Optional[int]) -> int:
    if not gamma > 0:
        raise ParameterError("gamma must be > 0", field="gamma")
    if u.n != n:
        raise ParameterError(f"utility has {u.n} states, matrix has {n}", field="utility")
    if horizon is not None and horizon != u.horizon:
        raise ParameterError(f"horizon {horizon} does not match utility length {u.horizon}",
                             field="horizon")
    if u.horizon < 2:
        raise ParameterError("horizon must be >= 2", field="horizon")
    return u.horizon


# ===================================================================
# 🔁 배치 커널
# ===================================================================

def backward_log_z(log_weights: np.ndarray, utility: np.ndarray, gamma: float) -> np.ndarray:
    """
    log_z[T-1] = U[T-1]/γ
    log_z[t]   = U[t]/γ + logsumexp_α(log_w[β, α] + log_z[t+1, α])

    log_weights: (..., n, n), 지지집합 밖은 -inf
    반환: (..., T, n)
    """
    log_weights = np.asarray(log_weights, dtype=float)
    if np.any(np.all(np.isneginf(log_weights), axis=-1)):
        raise SupportError("absorbing state with no transitions")

    horizon, n = utility.shape
    batch = log_weights.shape[:-2]
    log_z = np.empty(batch + (horizon, n))
    log_z[..., horizon - 1, :] = utility[horizon - 1] / gamma
    for t in range(horizon - 2, -1, -1):
        continuation = log_weights + log_z[..., t + 1, np.newaxis, :]
        log_z[..., t, :] = utility[t] / gamma + logsumexp(continuation, axis=-1)
    return log_z


def policy_matrices(log_weights: np.ndarray, log_z: np.ndarray) -> np.ndarray:
    """
    P_t[β, α] = softmax_α(log_w[β, α] + log_z[t+1, α])
    반환: (..., T-1, n, n), 행은 정확히 단체(simplex) 위
    """
    scores = log_weights[..., np.newaxis, :, :] + log_z[..., 1:, np.newaxis, :]
    return np.exp(scores - logsumexp(scores, axis=-1, keepdims=True))


def propagate_array(matrices: np.ndarray, rho0: np.ndarray) -> np.ndarray:
    """rho[t+1] = rho[t] @ P_t, 배치 축 허용"""
    horizon = matrices.shape[-3] + 1
    batch = matrices.shape[:-3]
    n = matrices.shape[-1]
    rho = np.empty(batch + (horizon, n))
    rho[..., 0, :] = rho0
    for t in range(horizon - 1):
        rho[..., t + 1, :] = np.einsum("...b,...ba->...a", rho[..., t, :], matrices[..., t, :, :])
    return rho


def row_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """마지막 축 기준 KL(p ‖ q), 0·log 0 = 0"""
    if np.any((p > 0) & (q <= 0)):
        raise SupportError("KL undefined: mass outside the default support")
    positive = p > 0
    safe_p = np.where(positive, p, 1.0)
    safe_q = np.where(positive, q, 1.0)
    return np.sum(np.where(positive, p * (np.log(safe_p) - np.log(safe_q)), 0.0), axis=-1)


# ===================================================================
# 🎯 비사유(non-private) LS-MDP
# ===================================================================

def solve_desirability(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float,
                       horizon: Optional[int] = None) -> Desirability:
    _check_instance(p_bar.n, u, gamma, horizon)
    log_z = backward_log_z(p_bar.log_rows(), u.values, gamma)
    return Desirability(log_z, gamma)


def optimal_policy(p_bar: TransitionMatrix, z: Desirability, gamma: float) -> Policy:
    if z.log_z.shape[1] != p_bar.n:
        raise ParameterError("desirability and matrix dimensions differ", field="z")
    mats = policy_matrices(p_bar.log_rows(), z.log_z)
    return Policy(mats, gamma, p_bar.support_mask)


def solve(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float) -> tuple[Policy, Desirability]:
    z = solve_desirability(p_bar, u, gamma)
    policy = optimal_policy(p_bar, z, gamma)
    logger.debug(f"LS-MDP 해결: n={p_bar.n}, T={u.horizon}, γ={gamma}")
    return policy, z


def value_function(z: Desirability, gamma: float) -> np.ndarray:
    """φ = -γ·log z"""
    return -gamma * z.log_z


def bellman_residual(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float,
                     z: Desirability) -> float:
    """
    φ_t 와 한 단계 전개(lookahead) -U_t + Σ_α P*_t (γ log(P*/P̄) + φ_{t+1}) 의 최대 편차
    """
    phi = value_function(z, gamma)
    policy = optimal_policy(p_bar, z, gamma).matrices
    p_rows = p_bar.rows
    residual = float(np.max(np.abs(phi[-1] + u.values[-1])))
    for t in range(u.horizon - 1):
        kl = row_kl(policy[t], p_rows)
        lookahead = -u.values[t] + gamma * kl + policy[t] @ phi[t + 1]
        residual = max(residual, float(np.max(np.abs(phi[t] - lookahead))))
    return residual


def _check_rho0(rho0, n: int) -> np.ndarray:
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.shape != (n,):
        raise ParameterError(f"rho0 must have length {n}", field="rho0")
    if np.any(rho0 < 0) or abs(rho0.sum() - 1.0) > RHO_DRIFT_TOL:
        raise ParameterError("rho0 must lie on the probability simplex", field="rho0")
    return rho0


def propagate(policy: Policy, rho0) -> DistributionTrajectory:
    rho0 = _check_rho0(rho0, policy.n)
    rho = propagate_array(policy.matrices, rho0)
    drift = np.abs(rho.sum(axis=1) - 1.0)
    if np.any(drift > RHO_DRIFT_TOL):
        raise DriftError(f"distribution drifted from the simplex by {drift.max():.3e}")
    rho = np.clip(rho, 0.0, None)
    rho /= rho.sum(axis=1, keepdims=True)
    return DistributionTrajectory(rho)


def evaluate_objective(policy: Policy, p_bar: TransitionMatrix, u: UtilitySchedule, rho0,
                       gamma: float) -> float:
    """
    Σ_{t=0}^{T-2} [ -Σ_α ρ_{t+1}[α]·U_{t+1}[α] + γ Σ_β ρ_t[β]·KL(P_t[β] ‖ P̄[β]) ]
    ρ 는 평가 대상 정책 자신이 유도하는 궤적
    """
    if policy.horizon != u.horizon or policy.n != p_bar.n:
        raise ParameterError("policy, utility and matrix dimensions differ", field="policy")
    if np.any(policy.matrices[:, p_bar.rows == 0] > 0):
        raise SupportError("KL undefined: policy mass outside the default support")

    rho = propagate(policy, rho0).rho
    kl = row_kl(policy.matrices, p_bar.rows[np.newaxis])  # (T-1, n)
    utility_term = -np.sum(rho[1:] * u.values[1:])
    discomfort = gamma * np.sum(rho[:-1] * kl)
    return float(utility_term + discomfort)


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ParameterError("p and q must have equal length")
    return float(row_kl(p, q))
