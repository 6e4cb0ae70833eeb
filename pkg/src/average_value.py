# src/average_value.py
"""
평균값 접근(average value approach)
1. 메커니즘으로 기본 행렬 표본 N 개를 뽑고 표본마다 비사유 LS-MDP 를 풂
2. 표본 정책의 산술 평균 = 기대 사유 정책의 Monte Carlo 추정
3. 2차 전개로 얻은 해석적 기대 정책과 기대 프라이버시 비용

해석식의 z̃ 는 명목 P̄ 로 푼 비사유 desirability 를 씁니다.
표본별 z̃_j 는 표본 정책과 Monte Carlo 기준 비용에만 쓰입니다.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from .dirichlet_privacy import MAX_REDRAWS, adjacent_matrix, draw_dirichlet
from .errors import NumericalError, ParameterError
from .lsmdp_core import backward_log_z, policy_matrices, propagate_array, solve_desirability
from .models import (
    CostReport,
    Desirability,
    Policy,
    PolicySampleSet,
    TransitionMatrix,
    UtilitySchedule,
)
from .private_policies import solve_private_method
from .reports import SampleSetSummary
from .seeding import get_workers

SOLVE_CHUNK = 64
ROW_SUM_WARN = 1e-6
REDRAW_STREAM = 0x5EED
ENTROPY_RULES = ("quadratic", "delta")
DENOMINATOR_RULES = ("termwise", "normalizer")


# ===================================================================
# 🎲 표본 정책
# ===================================================================

def _degenerate_rows(draws: np.ndarray, support: np.ndarray) -> np.ndarray:
    """지지 성분이 0 으로 underflow 되었거나 NaN 인 (표본, 행) 위치"""
    multi = support.sum(axis=1) >= 2
    bad_entry = (~(draws > 0)) & support[np.newaxis]
    return np.any(bad_entry, axis=-1) & multi[np.newaxis]


def _redraw(draws: np.ndarray, p_bar: TransitionMatrix, k: float, seed: int) -> int:
    """표본/행마다 고정된 자식 시드로 최대 MAX_REDRAWS 번 다시 뽑음"""
    redraws = 0
    for j, beta in zip(*np.nonzero(_degenerate_rows(draws, p_bar.support_mask))):
        support = p_bar.support_mask[beta]
        rng = np.random.default_rng(
            np.random.SeedSequence(int(seed), spawn_key=(REDRAW_STREAM, int(j), int(beta))))
        for _ in range(MAX_REDRAWS):
            redraws += 1
            g = rng.standard_gamma(k * p_bar.rows[beta, support])
            if np.all(g > 0):
                draws[j, beta] = 0.0
                draws[j, beta, support] = g / g.sum()
                break
        else:
            raise NumericalError(
                f"row {beta} of sample {j} collapsed to a point mass {MAX_REDRAWS} times (k={k})")
    return redraws


def sample_private_policies(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float,
                            horizon: Optional[int], k: float, n_samples: int, seed: int,
                            workers: Optional[int] = None) -> PolicySampleSet:
    """사유화 행렬 표본마다 비사유 해를 구함 (결과는 시드에만 의존)"""
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1", field="n_samples")
    if not k > 0:
        raise ParameterError("k must be > 0", field="k")
    if horizon is not None and horizon != u.horizon:
        raise ParameterError(f"horizon {horizon} does not match utility length {u.horizon}", field="horizon")

    draws = draw_dirichlet(k * p_bar.rows, p_bar.support_mask, n_samples, seed, workers)
    redraws = _redraw(draws, p_bar, k, seed)
    if redraws:
        logger.warning(f"⚠️ 퇴화된 Dirichlet 행 {redraws} 회 재추출 (k={k})")

    with np.errstate(divide="ignore"):
        log_w = np.where(p_bar.support_mask, np.log(draws), -np.inf)

    def _solve_chunk(start: int) -> tuple[np.ndarray, np.ndarray]:
        chunk = log_w[start:start + SOLVE_CHUNK]
        log_z = backward_log_z(chunk, u.values, gamma)
        return policy_matrices(chunk, log_z), log_z

    starts = range(0, n_samples, SOLVE_CHUNK)
    with ThreadPoolExecutor(max_workers=workers or get_workers()) as executor:
        results = list(executor.map(_solve_chunk, starts))

    matrices = np.concatenate([m for m, _ in results], axis=0)
    log_z = np.concatenate([z for _, z in results], axis=0)
    logger.info(f"🎲 표본 정책 {n_samples} 개 계산 완료 (k={k}, seed={seed})")
    return PolicySampleSet(matrices, draws, log_z, gamma, p_bar.support_mask, k, int(seed), redraws)


def mean_policy(samples: PolicySampleSet) -> Policy:
    """표본 정책의 산술 평균 (재정규화는 반올림 오차만 흡수)"""
    if samples.n_samples < 1:
        raise ParameterError("sample set is empty", field="samples")
    mean = samples.matrices.mean(axis=0)
    mean /= mean.sum(axis=-1, keepdims=True)
    return Policy(mean, samples.gamma, samples.support_mask)


# ===================================================================
# 📐 해석적 기대 정책
# ===================================================================

def _row_weights(p_bar: TransitionMatrix, log_z_next: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    w[t, β, α] = z̃_{t+1}[α] / Σ_ν P̄[β, ν] z̃_{t+1}[ν],  x = P̄·w  (지지집합 밖은 0)
    행마다 log 공간에서 정규화하므로 Σ_α x = 1 이고 큰 U 에서도 underflow 가 없음
    해석식은 행별 z̃ 스케일에 대해 0차 동차
    """
    mask = p_bar.support_mask[np.newaxis]
    scores = p_bar.log_rows()[np.newaxis] + log_z_next[:, np.newaxis, :]  # (T-1, n, n)
    log_norm = logsumexp(scores, axis=-1, keepdims=True)
    x = np.where(mask, np.exp(np.where(mask, scores - log_norm, 0.0)), 0.0)
    w = np.where(mask, np.exp(np.where(mask, log_z_next[:, np.newaxis, :] - log_norm, 0.0)), 0.0)
    return x, w


def _ratio_moments(p_bar: TransitionMatrix, z_tilde: Desirability, k: float, denominators: str):
    """
    X_α = P̃_α w_α, Y = Σ_α P̃_α w_α (E[Y] = 1) 에 대해
    (k+1)·Cov[X_α, Y] = x_α (w_α - 1),  (k+1)·Var[Y] = Σ_α x_α w_α - 1
    denominators="termwise" 는 m 차 보정항을 Σ_α x^m 으로, "normalizer" 는 (Σ_α x)^m = 1 로 나눔
    """
    if not k > 0:
        raise ParameterError("k must be > 0", field="k")
    if denominators not in DENOMINATOR_RULES:
        raise ParameterError(f"unknown denominator rule '{denominators}'", field="denominators")
    x, w = _row_weights(p_bar, z_tilde.log_z[1:])
    cov_xy = x * (w - 1.0) / (k + 1.0)
    var_y = (np.sum(x * w, axis=-1, keepdims=True) - 1.0) / (k + 1.0)
    if denominators == "termwise":
        denoms = {m: np.sum(x ** m, axis=-1, keepdims=True) for m in (2, 3, 4)}
    else:
        denoms = {m: np.ones_like(var_y) for m in (2, 3, 4)}
    return x, w, cov_xy, var_y, denoms


def expected_policy_terms(p_bar: TransitionMatrix, z_tilde: Desirability, k: float,
                          denominators: str = "termwise") -> np.ndarray:
    """E[P̃_t[β, α]] ≈ x - Cov[X, Y]/D₂ + x·Var[Y]/D₃  (재정규화 전)"""
    x, _, cov_xy, var_y, denoms = _ratio_moments(p_bar, z_tilde, k, denominators)
    return x - cov_xy / denoms[2] + x * var_y / denoms[3]


def expected_policy_analytical(p_bar: TransitionMatrix, z_tilde: Desirability, k: float,
                               denominators: str = "termwise") -> Policy:
    raw = expected_policy_terms(p_bar, z_tilde, k, denominators)
    drift = float(np.max(np.abs(raw.sum(axis=-1) - 1.0)))
    if drift > ROW_SUM_WARN:
        logger.debug(f"해석적 기대 정책 행 합 편차 {drift:.3e} (재정규화)")
    if np.any(raw < 0):
        logger.warning("⚠️ 해석적 기대 정책에 음수 성분, 0 으로 자름")
        raw = np.clip(raw, 0.0, None)
    raw = np.where(p_bar.support_mask[np.newaxis], raw, 0.0)
    gamma = z_tilde.gamma if z_tilde.gamma is not None else 1.0
    return Policy(raw / raw.sum(axis=-1, keepdims=True), gamma, p_bar.support_mask)


def analytical_row_sums(p_bar: TransitionMatrix, z_tilde: Desirability, k: float,
                        denominators: str = "termwise") -> np.ndarray:
    """
    재정규화 전 행 합 (T-1, n), 정확도 진단용
    termwise 에서는 1 + Var[Y]·(1/Σx³ - 1/Σx²) 이므로 1 이상이고 k 가 커지면 1 로 감소
    """
    return expected_policy_terms(p_bar, z_tilde, k, denominators).sum(axis=-1)


# ===================================================================
# 💸 기대 프라이버시 비용
# ===================================================================

def _policy_variance(p_bar: TransitionMatrix, z_tilde: Desirability, k: float, denominators: str) -> np.ndarray:
    """Var(X/Y) ≈ Var X/D₂ - 2·x·Cov[X, Y]/D₃ + x²·Var Y/D₄"""
    x, w, cov_xy, var_y, denoms = _ratio_moments(p_bar, z_tilde, k, denominators)
    var_x = w ** 2 * p_bar.rows * (1.0 - p_bar.rows) / (k + 1.0)
    return var_x / denoms[2] - 2.0 * x * cov_xy / denoms[3] + x ** 2 * var_y / denoms[4]


def _expected_entropy_term(mu: np.ndarray, var: np.ndarray, rule: str) -> np.ndarray:
    """E[P̃ log P̃] 근사"""
    positive = mu > 0
    if rule == "quadratic":
        # x·log x ≈ x² - x
        return np.where(positive, var + mu ** 2 - mu, 0.0)
    if rule == "delta":
        safe = np.where(positive, mu, 1.0)
        return np.where(positive, mu * np.log(safe) + var / (2.0 * safe), 0.0)
    raise ParameterError(f"unknown entropy rule '{rule}'", field="entropy_rule")


def _nominal_log_normalizer(log_p: np.ndarray, z: Desirability) -> np.ndarray:
    """log Σ_α P̄ z_{t+1}, (T-1, n)"""
    return logsumexp(log_p[np.newaxis] + z.log_z[1:, np.newaxis, :], axis=-1)


def _horizon_weights(policy: Policy, rho0: Optional[np.ndarray], n: int) -> np.ndarray:
    """기대 정책으로 전파한 ρ_t, t = 0..T-2"""
    rho0 = np.full(n, 1.0 / n) if rho0 is None else np.asarray(rho0, dtype=float)
    return propagate_array(policy.matrices, rho0)[:-1]


def monte_carlo_cost(p_bar: TransitionMatrix, z: Desirability, gamma: float,
                     samples: PolicySampleSet) -> np.ndarray:
    """
    표본별 ΔC_j[t, β] = γ Σ_α P̃_j (log P̃_j - log P̄ - log z̃_{j,t+1}) + γ log Σ_α P̄ z_{t+1}
    z̃_j 는 표본 j 자신의 desirability, 반환: (N, T-1, n)
    """
    if samples.log_z.shape[1:] != z.log_z.shape:
        raise ParameterError("sample and nominal desirability shapes differ", field="samples")
    log_p = np.where(p_bar.support_mask, p_bar.log_rows(), 0.0)
    log_z_next = samples.log_z[:, 1:, np.newaxis, :]
    mats = samples.matrices
    positive = mats > 0
    with np.errstate(divide="ignore"):
        log_m = np.where(positive, np.log(np.where(positive, mats, 1.0)), 0.0)
    inner = np.where(positive, mats * (log_m - log_p - log_z_next), 0.0)
    return gamma * inner.sum(axis=-1) + gamma * _nominal_log_normalizer(p_bar.log_rows(), z)


def expected_cost_analytical(p_bar: TransitionMatrix, z: Desirability, z_tilde: Desirability, gamma: float,
                             k: float, expected_policy: Policy, rho0=None, entropy_rule: str = "quadratic",
                             denominators: str = "termwise",
                             samples: Optional[PolicySampleSet] = None) -> CostReport:
    """
    ΔC_t[β] ≈ γ Σ_α (E[P̃ log P̃] - E[P̃]·log P̄ - E[P̃]·log z̃_{t+1}) + γ log Σ_α P̄ z_{t+1}

    ΔC_t 는 한 단계 비용이므로 total = Σ_t ρ_t·ΔC_t (ρ_t 는 기대 정책으로 전파)
    samples 가 주어지면 같은 ρ_t 로 합산한 Monte Carlo 기준값(평균, 표준오차, 95% 구간)과 차이를 함께 보고
    """
    if entropy_rule not in ENTROPY_RULES:
        raise ParameterError(f"unknown entropy rule '{entropy_rule}'", field="entropy_rule")
    if expected_policy.matrices.shape[:1] != z_tilde.log_z[1:].shape[:1]:
        raise ParameterError("expected policy and desirability horizons differ", field="expected_policy")

    mu = expected_policy.matrices
    var = _policy_variance(p_bar, z_tilde, k, denominators)
    entropy = _expected_entropy_term(mu, var, entropy_rule)
    log_p = np.where(p_bar.support_mask, p_bar.log_rows(), 0.0)
    cross = mu * (log_p + z_tilde.log_z[1:, np.newaxis, :])
    delta_c = gamma * np.sum(np.where(p_bar.support_mask, entropy - cross, 0.0), axis=-1)
    delta_c += gamma * _nominal_log_normalizer(p_bar.log_rows(), z)

    rho = _horizon_weights(expected_policy, rho0, p_bar.n)
    total = float(np.sum(rho * delta_c))
    report = CostReport(delta_c, total, "average", k)

    if samples is not None:
        per_sample = np.einsum("jtb,tb->j", monte_carlo_cost(p_bar, z, gamma, samples), rho)
        mc_mean = float(per_sample.mean())
        mc_stderr = float(per_sample.std(ddof=1) / math.sqrt(per_sample.size)) if per_sample.size > 1 else 0.0
        lower, upper = mc_mean - 1.96 * mc_stderr, mc_mean + 1.96 * mc_stderr
        within = lower <= total <= upper
        report.extras = {
            "monte_carlo_total": mc_mean,
            "monte_carlo_stderr": mc_stderr,
            "monte_carlo_ci95": [lower, upper],
            "analytical_minus_monte_carlo": total - mc_mean,
            "within_ci95": within,
        }
        if not within:
            logger.warning(f"⚠️ 해석적 기대 비용 {total:.6g} 가 Monte Carlo 95% 구간 "
                           f"[{lower:.6g}, {upper:.6g}] 밖 (차이 {total - mc_mean:.3e})")
    logger.info(f"💸 평균값 접근 기대 비용 (k={k}, rule={entropy_rule}/{denominators}): total={total:.6g}")
    return report


# ===================================================================
# 📏 인접 입력 안정성 / 요약
# ===================================================================

def private_policy(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float, method: str, k: float,
                   denominators: str = "termwise") -> Policy:
    """method=average 는 해석적 기대 정책, 그 밖에는 확률적 사유 정책"""
    if method == "average":
        z_nominal = solve_desirability(p_bar, u, gamma)
        return expected_policy_analytical(p_bar, z_nominal, k, denominators)
    return solve_private_method(p_bar, u, gamma, k, method)[0]


def adjacent_policy_distance(p_bar: TransitionMatrix, u: UtilitySchedule, gamma: float, row: int, h: float,
                             i: int, j: int, method: str, k: float, t: int = 0) -> float:
    """row 행을 인접 벡터로 바꾼 행렬과 원래 행렬의 사유 정책 L1 거리 (시점 t, 행 row)"""
    p_eta = adjacent_matrix(p_bar, row, h, i, j)
    first = private_policy(p_bar, u, gamma, method, k)
    second = private_policy(p_eta, u, gamma, method, k)
    return float(np.abs(first.matrices[t, row] - second.matrices[t, row]).sum())


def sample_summary(samples: PolicySampleSet, p_bar: TransitionMatrix, z_tilde: Desirability,
                   denominators: str = "termwise") -> SampleSetSummary:
    empirical = mean_policy(samples)
    analytical = expected_policy_analytical(p_bar, z_tilde, samples.k, denominators)
    row_sums = analytical_row_sums(p_bar, z_tilde, samples.k, denominators)
    l1_gap = float(np.abs(empirical.matrices - analytical.matrices).sum(axis=-1).max())
    return SampleSetSummary(
        k=samples.k,
        N=samples.n_samples,
        seed=samples.seed,
        redraws=samples.redraws,
        mean_policy=empirical.matrices.tolist(),
        analytical_policy=analytical.matrices.tolist(),
        row_sum_diagnostics=row_sums.tolist(),
        l1_gap=l1_gap,
    )
