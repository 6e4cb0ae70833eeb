# src/dirichlet_privacy.py
"""
Dirichlet 메커니즘 기반 차분 프라이버시
- 메커니즘 샘플링 (Gamma 정규화), 인접 벡터, (ε, δ) 회계
- 특수 함수: digamma, 다변량 beta 의 로그

기호 정리: PrivacyParams.psi 는 성분 임계값이고 digamma() 와는 무관합니다.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from loguru import logger
from scipy.special import gammaln

from .errors import DomainError, NumericalError, ParameterError
from .models import PrivacyParams, SimplexVector, TransitionMatrix
from .reports import PrivacyReport
from .seeding import get_workers

CHUNK_SIZE = 1024
ADJACENCY_ATOL = 1e-15
MIN_DELTA_SAMPLES = 1000
MAX_REDRAWS = 10

SeedLike = Union[int, np.random.SeedSequence]


# ===================================================================
# 🧮 특수 함수
# ===================================================================

# B_2k / 2k (x^-2k 계수), k = 1..7
_ASYMPTOTIC_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


def digamma(x):
    """
    ψ(x) = Γ'(x)/Γ(x), x > 0
    x < 6 이면 ψ(x) = ψ(x+1) - 1/x 로 이동한 뒤 점근 전개를 사용
    """
    arr = np.array(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ParameterError("digamma requires x > 0", field="x")

    shift = np.zeros_like(arr)
    while True:
        small = arr < 6.0
        if not np.any(small):
            break
        shift = np.where(small, shift - 1.0 / np.where(small, arr, 1.0), shift)
        arr = np.where(small, arr + 1.0, arr)

    inv2 = 1.0 / (arr * arr)
    series = np.zeros_like(arr)
    for coeff in reversed(_ASYMPTOTIC_COEFFS):
        series = (series + coeff) * inv2
    result = np.log(arr) - 0.5 / arr - series + shift
    return float(result) if result.ndim == 0 else result


def log_multivariate_beta(a) -> float:
    """log B(a) = Σ logΓ(a_i) - logΓ(Σ a_i)"""
    a = np.asarray(a, dtype=float)
    if a.size == 0 or np.any(~(a > 0)):
        raise ParameterError("multivariate beta requires positive arguments", field="a")
    return float(np.sum(gammaln(a)) - gammaln(np.sum(a)))


def dirichlet_moments(zeta: SimplexVector, k: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Dir(k·ζ) 의 평균/분산/공분산
    mean = ζ, var = ζ(1-ζ)/(k+1), cov_ij = -ζ_i ζ_j/(k+1) (i≠j)
    """
    if not k > 0:
        raise ParameterError("k must be > 0", field="k")
    mean = zeta.entries.copy()
    cov = -np.outer(mean, mean) / (k + 1.0)
    variance = mean * (1.0 - mean) / (k + 1.0)
    np.fill_diagonal(cov, variance)
    return mean, variance, cov


# ===================================================================
# 🎲 메커니즘
# ===================================================================

def _root_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def draw_dirichlet(concentration: np.ndarray, support: np.ndarray, n_samples: int, seed: SeedLike,
                   workers: Optional[int] = None) -> np.ndarray:
    """
    Gamma(shape=k·ζ_i) 독립 추출 후 합으로 정규화, 지지집합 밖은 0
    concentration / support: (..., m), 반환: (n_samples, ..., m)

    CHUNK_SIZE 단위로 자식 시드를 나누므로 워커 수와 무관하게 결과가 같습니다.
    정규화 합이 0 으로 underflow 된 표본은 NaN 으로 남기고 호출자가 처리합니다.
    """
    concentration = np.asarray(concentration, dtype=float)
    support = np.asarray(support, dtype=bool)
    shape = np.where(support, concentration, 1.0)
    n_chunks = max(1, math.ceil(n_samples / CHUNK_SIZE))
    children = _root_sequence(seed).spawn(n_chunks)

    def _chunk(i: int) -> np.ndarray:
        rng = np.random.default_rng(children[i])
        size = min(CHUNK_SIZE, n_samples - i * CHUNK_SIZE)
        g = rng.standard_gamma(shape, size=(size,) + shape.shape)
        g = np.where(support, g, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return g / g.sum(axis=-1, keepdims=True)

    with ThreadPoolExecutor(max_workers=workers or get_workers()) as executor:
        parts = list(executor.map(_chunk, range(n_chunks)))
    return np.concatenate(parts, axis=0)


def sample_mechanism(zeta: SimplexVector, k: float, rng: np.random.Generator) -> SimplexVector:
    """Dir(k·ζ) 에서 한 번 추출, 지지집합 크기 < 2 이면 ζ 그대로"""
    if not k > 0:
        raise ParameterError("k must be > 0", field="k")
    if zeta.support_size < 2:
        return zeta
    if np.any(zeta.entries[zeta.support] <= 0):
        raise ParameterError("supported entries must be > 0", field="zeta")

    alpha = k * zeta.entries[zeta.support]
    for _ in range(MAX_REDRAWS):
        g = rng.standard_gamma(alpha)
        total = g.sum()
        if total > 0:
            entries = np.zeros_like(zeta.entries)
            entries[zeta.support] = g / total
            return SimplexVector(entries, zeta.support)
    raise NumericalError(f"Dirichlet draw underflowed {MAX_REDRAWS} times (k={k})")


def privatize_matrix(p_bar: TransitionMatrix, k: float, rng: np.random.Generator) -> TransitionMatrix:
    """행 단위로 메커니즘 적용, 지지집합 마스크는 그대로"""
    rows = np.array([sample_mechanism(p_bar.row(b), k, rng).entries for b in range(p_bar.n)])
    return TransitionMatrix(rows, p_bar.support_mask)


def adjacent_vector(zeta: SimplexVector, h: float, i: int, j: int) -> SimplexVector:
    """성분 i 에서 j 로 h/2 를 옮긴 벡터 (L1 거리 = h)"""
    if h < 0 or h > 1:
        raise ParameterError("h must lie in [0, 1]", field="h")
    if h == 0:
        return zeta
    if i == j or not (zeta.support[i] and zeta.support[j]):
        raise ParameterError("i and j must be distinct supported indices")
    if zeta.entries[i] < h / 2:
        raise ParameterError(f"entry {i} ({zeta.entries[i]:.4g}) smaller than h/2; result would be negative",
                             field="h")
    entries = zeta.entries.copy()
    entries[i] -= h / 2
    entries[j] += h / 2
    return SimplexVector(entries, zeta.support)


def adjacent_matrix(p_bar: TransitionMatrix, row: int, h: float, i: int, j: int) -> TransitionMatrix:
    """row 행만 adjacent_vector 로 바꾼 행렬"""
    rows = p_bar.rows.copy()
    rows[row] = adjacent_vector(p_bar.row(row), h, i, j).entries
    return TransitionMatrix(rows, p_bar.support_mask)


def is_adjacent(zeta: SimplexVector, eta: SimplexVector, h: float) -> bool:
    if len(zeta) != len(eta):
        raise ParameterError("vectors must have equal length")
    diff = np.abs(zeta.entries - eta.entries)
    differing = int(np.sum(diff > ADJACENCY_ATOL))
    return differing <= 2 and float(diff.sum()) <= h + 1e-12


# ===================================================================
# 🔐 (ε, δ) 회계
# ===================================================================

def epsilon_guarantee(params: PrivacyParams, omega: float, omega_bar: float, w_size: int) -> float:
    """
    ε = log B(kω, k(1-ω̄-ω)) - log B(k(ω+h/2), k(1-ω̄-ω-h/2))
        + (kh/2)·log((1-(|W|-1)ψ)/ψ)
    """
    if params.psi is None:
        raise ParameterError("psi is required for epsilon accounting", field="psi")
    k, h, psi = params.k, params.h, params.psi
    for name, value in (("omega", omega), ("omega_bar", omega_bar)):
        if not 0 < value < 1:
            raise DomainError(f"{name}={value} outside (0, 1): parameters outside the guarantee domain")

    args = np.array([
        k * omega,
        k * (1.0 - omega_bar - omega),
        k * (omega + h / 2.0),
        k * (1.0 - omega_bar - omega - h / 2.0),
    ])
    if np.any(args <= 0):
        raise DomainError("nonpositive beta argument: parameters outside the guarantee domain")
    tail_arg = (1.0 - (w_size - 1) * psi) / psi
    if not tail_arg > 0:
        raise DomainError("nonpositive log argument: parameters outside the guarantee domain")

    beta_ratio = log_multivariate_beta(args[:2]) - log_multivariate_beta(args[2:])
    return float(beta_ratio + (k * h / 2.0) * math.log(tail_arg))


@dataclass(frozen=True)
class DeltaEstimate:
    delta: float
    stderr: float
    n_samples: int


def _max_components(zeta: SimplexVector, k: float, n_samples: int, seed: SeedLike) -> np.ndarray:
    if zeta.support_size < 2:
        return np.full(n_samples, float(zeta.entries.max()))
    draws = draw_dirichlet(k * zeta.entries, zeta.support, n_samples, seed)
    # underflow 된 표본(NaN)은 한 점에 몰린 것으로 간주
    return np.nan_to_num(draws.max(axis=-1), nan=1.0)


def estimate_delta(zeta: SimplexVector, k: float, psi: float, n_samples: int, seed: SeedLike) -> DeltaEstimate:
    """δ = 1 - P[메커니즘 출력의 모든 성분 ≤ ψ] (Monte Carlo)"""
    if n_samples < MIN_DELTA_SAMPLES:
        raise ParameterError(f"n_samples must be >= {MIN_DELTA_SAMPLES}", field="n_samples")
    if psi >= 1:
        return DeltaEstimate(0.0, 0.0, n_samples)
    failures = _max_components(zeta, k, n_samples, seed) > psi
    delta = float(failures.mean())
    stderr = math.sqrt(delta * (1.0 - delta) / n_samples)
    return DeltaEstimate(delta, stderr, n_samples)


def psi_for_delta(zeta: SimplexVector, k: float, delta: float, n_samples: int, seed: SeedLike) -> float:
    """최대 성분의 (1-δ) 분위수, 같은 표본 위에서 estimate_delta 의 역함수"""
    if not 0 <= delta <= 1:
        raise ParameterError("delta must lie in [0, 1]", field="delta")
    if n_samples < MIN_DELTA_SAMPLES:
        raise ParameterError(f"n_samples must be >= {MIN_DELTA_SAMPLES}", field="n_samples")
    maxima = _max_components(zeta, k, n_samples, seed)
    psi = float(np.quantile(maxima, 1.0 - delta, method="higher"))
    return min(max(psi, 1e-12), 1.0 - 1e-12)


def output_overlap(zeta: SimplexVector, eta: SimplexVector, k: float, n_samples: int, seed: SeedLike,
                   level: float = 0.95) -> float:
    """
    η 표본 중 ζ 표본의 Mahalanobis 영역(경험적 level 분위수) 안에 들어가는 비율
    마지막 지지 좌표는 합 제약으로 결정되므로 제외
    """
    if not np.array_equal(zeta.support, eta.support):
        raise ParameterError("zeta and eta must share the same support")
    if zeta.support_size < 2:
        return 1.0
    seed_zeta, seed_eta = _root_sequence(seed).spawn(2)
    cols = np.flatnonzero(zeta.support)[:-1]
    x_zeta = draw_dirichlet(k * zeta.entries, zeta.support, n_samples, seed_zeta)[:, cols]
    x_eta = draw_dirichlet(k * eta.entries, eta.support, n_samples, seed_eta)[:, cols]

    center = np.nanmean(x_zeta, axis=0)
    precision = np.linalg.pinv(np.atleast_2d(np.cov(x_zeta, rowvar=False)))

    def _mahalanobis(x: np.ndarray) -> np.ndarray:
        d = x - center
        return np.einsum("ni,ij,nj->n", d, precision, d)

    threshold = np.quantile(_mahalanobis(x_zeta), level)
    return float(np.mean(_mahalanobis(x_eta) <= threshold))


def matrix_privacy_report(p_bar: TransitionMatrix, params: PrivacyParams, n_samples: int, seed: SeedLike,
                          omega: Optional[float] = None, omega_bar: Optional[float] = None,
                          w_size: Optional[int] = None) -> PrivacyReport:
    """
    행렬 전체의 프라이버시 보고서
    - 행별 ε: 기본값 ω=최소 지지 성분, ω̄=최대 지지 성분, |W|=지지집합 크기-1
    - 행렬 ε = 유효 행 ε 의 최댓값 (정의역 밖 행은 None)
    - δ = 사유화된 행 δ 의 최댓값, ψ 가 없으면 목표 δ 에서 역산
    """
    row_seeds = _root_sequence(seed).spawn(2 * p_bar.n)
    rows = [p_bar.row(b) for b in range(p_bar.n)]
    private_rows = [b for b, row in enumerate(rows) if row.support_size >= 2]
    excluded = [b for b in range(p_bar.n) if b not in private_rows]
    if excluded:
        logger.warning(f"⚠️ 지지집합 < 2 인 행 {excluded} 는 회계에서 제외 (그대로 공개)")

    psi = params.psi
    if psi is None:
        if params.delta is None:
            raise ParameterError("either psi or delta must be given", field="privacy")
        candidates = [psi_for_delta(rows[b], params.k, params.delta, n_samples, row_seeds[2 * b])
                      for b in private_rows]
        psi = max(candidates) if candidates else 1.0 - 1e-12
        params.psi = psi
        logger.info(f"🎯 δ={params.delta} 에 대응하는 ψ={psi:.6f}")

    per_row_delta: list[Optional[float]] = [None] * p_bar.n
    worst = DeltaEstimate(0.0, 0.0, n_samples)
    for b in private_rows:
        estimate = estimate_delta(rows[b], params.k, psi, n_samples, row_seeds[2 * b + 1])
        per_row_delta[b] = estimate.delta
        if estimate.delta > worst.delta:
            worst = estimate
    delta, delta_stderr = worst.delta, worst.stderr

    per_row_epsilon: list[Optional[float]] = [None] * p_bar.n
    for b in private_rows:
        supported = rows[b].entries[rows[b].support]
        row_omega = omega if omega is not None else float(supported.min())
        row_omega_bar = omega_bar if omega_bar is not None else float(supported.max())
        row_w = w_size if w_size is not None else rows[b].support_size - 1
        try:
            per_row_epsilon[b] = epsilon_guarantee(
                PrivacyParams(params.k, params.h, psi=psi), row_omega, row_omega_bar, row_w)
        except DomainError as e:
            logger.debug(f"행 {b}: ε 계산 불가 ({e})")

    valid_eps = [e for e in per_row_epsilon if e is not None]
    epsilon = max(valid_eps) if valid_eps else None
    if epsilon is None:
        logger.warning("⚠️ 보장식 정의역 안에 드는 행이 없어 ε 를 보고하지 않습니다")
    params.epsilon = epsilon

    return PrivacyReport(
        k=params.k,
        h=params.h,
        psi=psi,
        delta=delta,
        delta_stderr=delta_stderr,
        epsilon=epsilon,
        per_row_epsilon=per_row_epsilon,
        per_row_delta=per_row_delta,
        excluded_rows=excluded,
        omega=omega,
        omega_bar=omega_bar,
        w_size=w_size,
    )
