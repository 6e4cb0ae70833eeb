# src/models.py
"""
도메인 데이터 모델
행렬 규약: rows[β][α] = 상태 β 에서 α 로 이동할 확률 (행 = 출발 상태)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DriftError, ParameterError, SupportError

ROW_SUM_TOL = 1e-12
RHO_SUM_TOL = 1e-9


def _as_float_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DataError(f"{name}: expected {ndim}-D array, got shape {arr.shape}")
    return arr


# ===================================================================
# ensemble_model 타입
# ===================================================================

@dataclass(frozen=True)
class ConsumptionSeries:
    timestamps: np.ndarray  # epoch seconds, 엄격 증가
    power: np.ndarray  # MW, shape (건물 수, 시점 수)
    interval_length: float  # seconds
    building_ids: tuple[str, ...] = ("0",)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        power = np.array(self.power, dtype=float)
        if power.ndim == 1:
            power = power[np.newaxis, :]
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "power", power)
        object.__setattr__(self, "building_ids", tuple(str(b) for b in self.building_ids))

        if ts.size == 0:
            raise DataError("no samples")
        if power.shape != (len(self.building_ids), ts.size):
            raise DataError(
                f"power shape {power.shape} does not match "
                f"{len(self.building_ids)} buildings x {ts.size} timestamps"
            )
        if np.any(np.diff(ts) <= 0):
            row = int(np.argmax(np.diff(ts) <= 0)) + 2
            raise DataError(f"non-monotone timestamp at row {row}")
        if ts.size > 1 and np.any(np.diff(ts) != self.interval_length):
            raise DataError("irregular sampling interval")
        if not np.all(np.isfinite(power)) or np.any(power < 0):
            raise DataError("power values must be finite and >= 0")

    @classmethod
    def from_arrays(cls, timestamps, power, building_ids: Optional[Sequence[str]] = None,
                    interval_length: Optional[float] = None) -> "ConsumptionSeries":
        ts = np.asarray(timestamps, dtype=np.int64)
        power = np.array(power, dtype=float)
        if power.ndim == 1:
            power = power[np.newaxis, :]
        if interval_length is None:
            interval_length = float(ts[1] - ts[0]) if ts.size > 1 else 900.0
        if building_ids is None:
            building_ids = tuple(str(i) for i in range(power.shape[0]))
        return cls(ts, power, float(interval_length), tuple(building_ids))

    @property
    def n_buildings(self) -> int:
        return self.power.shape[0]

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def aggregate(self, building_id: str = "aggregate") -> "ConsumptionSeries":
        """건물 합산 전력"""
        return ConsumptionSeries(self.timestamps, self.power.sum(axis=0), self.interval_length,
                                 (building_id,))

    def window(self, start: int, end: int) -> "ConsumptionSeries":
        """[start, end) epoch 구간 선택 (계절 선택은 호출자 몫)"""
        mask = (self.timestamps >= start) & (self.timestamps < end)
        if not mask.any():
            raise DataError("no samples")
        return ConsumptionSeries(self.timestamps[mask], self.power[:, mask], self.interval_length,
                                 self.building_ids)

    @staticmethod
    def combine(members: Sequence["ConsumptionSeries"]) -> "ConsumptionSeries":
        """앙상블 묶기: 모든 시계열은 동일한 timestamps 를 공유해야 함"""
        if not members:
            raise DataError("no samples")
        first = members[0]
        for m in members[1:]:
            if not np.array_equal(m.timestamps, first.timestamps):
                raise DataError("ensemble members must share identical timestamps")
        power = np.vstack([m.power for m in members])
        ids = tuple(b for m in members for b in m.building_ids)
        return ConsumptionSeries(first.timestamps, power, first.interval_length, ids)


@dataclass(frozen=True)
class StateSpace:
    bin_edges: np.ndarray  # MW, 길이 n+1

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        object.__setattr__(self, "bin_edges", edges)
        if edges.ndim != 1 or edges.size < 3:
            raise ParameterError("state space needs at least 2 states", field="n_states")
        if np.any(np.diff(edges) <= 0):
            raise DataError("bin edges must be strictly increasing")

    @property
    def n(self) -> int:
        return self.bin_edges.size - 1

    @property
    def representative_power(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def bin_width(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def locate(self, power) -> np.ndarray:
        """내부 경계값은 상위 bin, 최댓값은 최상위 bin"""
        idx = np.searchsorted(self.bin_edges, np.asarray(power, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n - 1).astype(np.int64)


@dataclass(frozen=True)
class TransitionMatrix:
    rows: np.ndarray  # (n, n), rows[β][α]
    support_mask: np.ndarray  # (n, n) bool

    def __post_init__(self):
        rows = _as_float_array(self.rows, 2, "rows")
        mask = np.asarray(self.support_mask, dtype=bool)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "support_mask", mask)

        n = rows.shape[0]
        if rows.shape != (n, n) or mask.shape != (n, n):
            raise DataError(f"transition matrix must be square, got {rows.shape}")
        if not np.all(np.isfinite(rows)) or np.any(rows < 0) or np.any(rows > 1):
            raise DataError("transition entries must lie in [0, 1]")
        if np.any(rows[~mask] != 0):
            raise SupportError("mass outside the support mask")
        drift = np.abs(rows.sum(axis=1) - 1.0)
        if np.any(drift > ROW_SUM_TOL):
            raise DriftError(f"row sums deviate from 1 by {drift.max():.3e}")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def log_rows(self) -> np.ndarray:
        """지지집합 밖은 -inf"""
        out = np.full(self.rows.shape, -np.inf)
        out[self.support_mask] = np.log(self.rows[self.support_mask])
        return out

    def row(self, beta: int) -> "SimplexVector":
        return SimplexVector(self.rows[beta], self.support_mask[beta])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rows": self.rows.tolist(),
            "support_mask": self.support_mask.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TransitionMatrix":
        try:
            matrix = cls(np.array(payload["rows"], dtype=float),
                         np.array(payload["support_mask"], dtype=bool))
        except KeyError as e:
            raise DataError(f"transition matrix JSON missing field {e}") from e
        if matrix.n != int(payload.get("n", matrix.n)):
            raise DataError("field n does not match rows")
        return matrix


# ===================================================================
# lsmdp_core 타입
# ===================================================================

@dataclass(frozen=True)
class UtilitySchedule:
    values: np.ndarray  # (T, n), 통화 단위

    def __post_init__(self):
        values = _as_float_array(self.values, 2, "utility")
        object.__setattr__(self, "values", values)
        if not np.all(np.isfinite(values)):
            raise DataError("utility values must be finite")

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, horizon: int, n: int) -> "UtilitySchedule":
        return cls(np.zeros((horizon, n)))


@dataclass(frozen=True)
class Desirability:
    log_z: np.ndarray  # (T, n), 자연로그
    gamma: Optional[float] = None

    @property
    def horizon(self) -> int:
        return self.log_z.shape[0]

    @property
    def z(self) -> np.ndarray:
        return np.exp(self.log_z)


@dataclass(frozen=True)
class Policy:
    matrices: np.ndarray  # (T-1, n, n)
    gamma: float
    support_mask: np.ndarray  # (n, n), 기본 행렬의 지지집합

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=float)
        mask = np.asarray(self.support_mask, dtype=bool)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "support_mask", mask)
        if mats.ndim != 3 or mats.shape[1:] != mask.shape:
            raise DataError(f"policy shape {mats.shape} inconsistent with support {mask.shape}")
        if np.any(mats[:, ~mask] != 0):
            raise SupportError("policy puts mass outside the default support")
        if np.any(mats < 0):
            raise DataError("policy entries must be nonnegative")
        drift = np.abs(mats.sum(axis=2) - 1.0)
        if drift.size and np.any(drift > ROW_SUM_TOL):
            raise DriftError(f"policy row sums deviate from 1 by {drift.max():.3e}")

    @property
    def horizon(self) -> int:
        return self.matrices.shape[0] + 1

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    def matrix(self, t: int) -> TransitionMatrix:
        return TransitionMatrix(self.matrices[t], self.support_mask)

    @classmethod
    def constant(cls, matrix: TransitionMatrix, horizon: int, gamma: float) -> "Policy":
        mats = np.repeat(matrix.rows[np.newaxis], horizon - 1, axis=0)
        return cls(mats, gamma, matrix.support_mask)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "T": self.horizon,
            "matrices": self.matrices.tolist(),
        }


@dataclass(frozen=True)
class DistributionTrajectory:
    rho: np.ndarray  # (T, n)

    @property
    def horizon(self) -> int:
        return self.rho.shape[0]


# ===================================================================
# dirichlet_privacy 타입
# ===================================================================

@dataclass(frozen=True)
class SimplexVector:
    entries: np.ndarray
    support: np.ndarray  # bool mask

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        support = np.asarray(self.support, dtype=bool)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "support", support)
        if entries.shape != support.shape or entries.ndim != 1:
            raise DataError("entries and support must be 1-D and of equal length")
        if np.any(entries < 0) or np.any(entries[~support] != 0):
            raise DataError("simplex entries must be >= 0 and zero off-support")
        if abs(entries.sum() - 1.0) > ROW_SUM_TOL:
            raise DriftError(f"simplex vector sums to {entries.sum():.15f}")

    @classmethod
    def from_probs(cls, entries, support=None) -> "SimplexVector":
        entries = np.asarray(entries, dtype=float)
        if support is None:
            support = entries > 0
        return cls(entries, support)

    def __len__(self) -> int:
        return self.entries.size

    @property
    def support_size(self) -> int:
        return int(self.support.sum())


@dataclass
class PrivacyParams:
    k: float
    h: float
    delta: Optional[float] = None
    psi: Optional[float] = None
    epsilon: Optional[float] = None  # 회계(accounting) 실행 후에만 채워짐

    def __post_init__(self):
        if not self.k > 0:
            raise ParameterError("k must be > 0", field="k")
        if not 0 < self.h <= 1:
            raise ParameterError("h must lie in (0, 1]", field="h")
        if self.delta is not None and not 0 <= self.delta <= 1:
            raise ParameterError("delta must lie in [0, 1]", field="delta")
        if self.psi is not None and not 0 < self.psi < 1:
            raise ParameterError("psi must lie in (0, 1)", field="psi")


# ===================================================================
# private_policies / average_value 타입
# ===================================================================

@dataclass(frozen=True)
class ExpectedLogMatrix:
    values: np.ndarray  # (n, n), 지지집합 밖 -inf
    method: str  # taylor | digamma | exact | monte_carlo
    k: Optional[float] = None

    @property
    def support_mask(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass
class CostReport:
    delta_c: np.ndarray  # (T-1, n)
    total: float
    method: str
    k: Optional[float] = None
    realized_gap: Optional[float] = None
    cross_check_max_abs: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        per_state = [
            {"t": int(t), "beta": int(b), "delta_c": float(self.delta_c[t, b])}
            for t in range(self.delta_c.shape[0])
            for b in range(self.delta_c.shape[1])
        ]
        payload = {"method": self.method, "k": self.k, "per_state": per_state, "total": float(self.total)}
        if self.realized_gap is not None:
            payload["realized_gap"] = float(self.realized_gap)
        payload.update(self.extras)
        return payload


@dataclass
class PolicySampleSet:
    matrices: np.ndarray  # (N, T-1, n, n) 표본별 정책
    draws: np.ndarray  # (N, n, n) 사유화된 기본 행렬
    log_z: np.ndarray  # (N, T, n) 표본별 desirability
    gamma: float
    support_mask: np.ndarray
    k: float
    seed: int
    redraws: int = 0

    @property
    def n_samples(self) -> int:
        return self.matrices.shape[0]

    def policy(self, j: int) -> Policy:
        return Policy(self.matrices[j], self.gamma, self.support_mask)


# ===================================================================
# dr_sim 타입
# ===================================================================

@dataclass(frozen=True)
class DrEvent:
    start: int
    end: int
    lead_time: int = 0
    incentive: float = 0.0  # 통화 / MW 감축
    tariff: float | Sequence[float] = 0.0  # 통화 / MWh, 스칼라 또는 시점별

    def validate(self, horizon: int) -> None:
        if not 0 <= self.start < self.end <= horizon:
            raise ParameterError(f"event window [{self.start}, {self.end}) outside horizon {horizon}",
                                 field="event")
        if self.lead_time < 0:
            raise ParameterError("lead_time must be >= 0", field="event.lead_time")
        if self.incentive < 0 or np.any(np.asarray(self.tariff, dtype=float) < 0):
            raise ParameterError("prices must be nonnegative", field="event")

    @property
    def active_start(self) -> int:
        return max(0, self.start - self.lead_time)

    def tariff_array(self, horizon: int) -> np.ndarray:
        tariff = np.asarray(self.tariff, dtype=float)
        if tariff.ndim == 0:
            return np.full(horizon, float(tariff))
        if tariff.size < horizon:
            raise ParameterError(f"tariff has {tariff.size} steps, horizon needs {horizon}",
                                 field="event.tariff")
        return tariff[:horizon]


@dataclass(frozen=True)
class PowerTrajectory:
    expected_power: np.ndarray  # MW, 시점별
    name: str = ""

    def __len__(self) -> int:
        return int(self.expected_power.size)
