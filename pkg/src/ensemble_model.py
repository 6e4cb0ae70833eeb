# src/ensemble_model.py
"""
부하 앙상블 모델
1. 소비 전력 CSV 읽기 / 합성 건물 프로파일 생성
2. 앙상블 합성 (기준 프로파일 ± noise_frac 이내의 절단 가우시안 잡음)
3. 합산 전력을 등간격 bin 으로 이산화 → 마르코프 상태 경로
4. 상태 경로에서 기본 전이 행렬 P̄ 추정 (방문하지 않은 상태는 자기 루프)
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger

from .errors import DataError, ParameterError, ParseError
from .io_utils import read_json, write_csv, write_json
from .models import ConsumptionSeries, StateSpace, TransitionMatrix
from .seeding import child_rngs, get_workers

REQUIRED_COLUMNS = ("timestamp", "power_mw")
STATE_SPACE_COLUMNS = ("state", "lower_mw", "upper_mw", "representative_mw")
MAX_RESAMPLE_ROUNDS = 1000
SECONDS_PER_DAY = 86400


# ===================================================================
# 📥 CSV 입력
# ===================================================================

def _parse_numeric(frame: pd.DataFrame, column: str, dtype) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.argmax(bad.to_numpy())) + 1
        raise ParseError(f"invalid {column} at row {row}", row=row)
    return values.to_numpy(dtype=dtype)


def _check_rows(timestamps: np.ndarray, power: np.ndarray) -> None:
    """데이터 행 번호(헤더 제외, 1부터)로 오류 위치를 알려줌"""
    if timestamps.size > 1:
        back = np.diff(timestamps) <= 0
        if back.any():
            row = int(np.argmax(back)) + 2
            raise ParseError(f"non-monotone timestamp at row {row}", row=row)
    negative = power < 0
    if negative.any():
        row = int(np.argmax(negative)) + 1
        raise ParseError(f"negative power at row {row}", row=row)


def load_consumption_csv(path: Union[str, Path]) -> ConsumptionSeries:
    """
    헤더 `timestamp,power_mw[,building_id]`
    building_id 가 있으면 건물별 시계열을 한 ConsumptionSeries 에 묶어 반환 (건물은 첫 등장 순서)
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise ParseError("no samples") from e

    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"missing column(s): {', '.join(missing)}", row=0)
    if frame.empty:
        raise ParseError("no samples")

    if "building_id" not in frame.columns:
        ts = _parse_numeric(frame, "timestamp", np.int64)
        power = _parse_numeric(frame, "power_mw", float)
        _check_rows(ts, power)
        series = ConsumptionSeries.from_arrays(ts, power, building_ids=("0",))
        logger.info(f"📥 {path.name}: 시점 {len(series)} 개, 간격 {series.interval_length:.0f}s")
        return series

    members = []
    for building_id, group in frame.groupby("building_id", sort=False):
        local = group.reset_index(drop=True)
        try:
            ts = _parse_numeric(local, "timestamp", np.int64)
            power = _parse_numeric(local, "power_mw", float)
            _check_rows(ts, power)
        except ParseError as e:
            # 그룹 안의 행 번호를 원래 파일의 데이터 행 번호로 되돌림
            row = int(group.index[e.row - 1]) + 1
            reason = str(e).rsplit(" at row", 1)[0]
            raise ParseError(f"{reason} at row {row} (building {building_id})", row=row) from e
        members.append(ConsumptionSeries.from_arrays(ts, power, building_ids=(str(building_id),)))

    series = ConsumptionSeries.combine(members)
    logger.info(f"📥 {path.name}: 건물 {series.n_buildings} 개 x 시점 {len(series)} 개")
    return series


# ===================================================================
# 🏢 합성 데이터
# ===================================================================

def synthetic_base_profile(days: int = 7, interval_s: int = 900, peak_mw: float = 1.2,
                           base_mw: float = 0.4, seed: int = 0) -> ConsumptionSeries:
    """
    상업용 건물 한 동의 합성 전력 프로파일
    야간 기저부하 + 주간(07~19시) 냉방/조명 고원 (완만한 램프) + 주말 감소 + 작은 AR(1) 잡음
    """
    if days < 1 or interval_s <= 0:
        raise ParameterError("days must be >= 1 and interval_s > 0", field="days")
    if not 0 <= base_mw < peak_mw:
        raise ParameterError("need 0 <= base_mw < peak_mw", field="peak_mw")

    steps = days * SECONDS_PER_DAY // interval_s
    ts = np.arange(steps, dtype=np.int64) * interval_s
    hour = (ts % SECONDS_PER_DAY) / 3600.0
    day = ts // SECONDS_PER_DAY

    # 07시 상승, 19시 하강 (폭 ~1시간 로지스틱)
    occupied = 1.0 / (1.0 + np.exp(-(hour - 7.0) * 2.0)) - 1.0 / (1.0 + np.exp(-(hour - 19.0) * 2.0))
    afternoon = 0.15 * np.exp(-0.5 * ((hour - 15.0) / 2.5) ** 2)
    weekend = np.where(day % 7 >= 5, 0.4, 1.0)
    shape = np.clip(occupied * (1.0 + afternoon) * weekend, 0.0, None)

    rng = np.random.default_rng(seed)
    noise = np.empty(steps)
    level = 0.0
    for i, shock in enumerate(rng.normal(0.0, 0.01 * peak_mw, size=steps)):
        level = 0.8 * level + shock
        noise[i] = level

    power = np.clip(base_mw + (peak_mw - base_mw) * shape / shape.max() + noise, 0.0, None)
    return ConsumptionSeries.from_arrays(ts, power, building_ids=("base",), interval_length=interval_s)


def _truncated_noise(rng: np.random.Generator, size: int, noise_frac: float, sigma: float) -> np.ndarray:
    """|g| <= noise_frac 가 될 때까지 기각 재추출"""
    g = rng.normal(0.0, sigma, size=size)
    for _ in range(MAX_RESAMPLE_ROUNDS):
        bad = np.abs(g) > noise_frac
        if not bad.any():
            return g
        g[bad] = rng.normal(0.0, sigma, size=int(bad.sum()))
    raise ParameterError(f"noise_sigma {sigma} too wide for noise_frac {noise_frac}", field="noise_sigma")


def synthesize_ensemble(base: ConsumptionSeries, n_buildings: int, noise_frac: float, seed: int,
                        noise_sigma: Optional[float] = None,
                        workers: Optional[int] = None) -> list[ConsumptionSeries]:
    """
    건물 i 의 시계열 = base·(1+g), |g| <= noise_frac
    건물별 시드는 child_rngs(seed, n_buildings) 로 고정되어 워커 수와 무관
    """
    if n_buildings < 1:
        raise ParameterError("n_buildings must be >= 1", field="n_buildings")
    if not 0 <= noise_frac < 1:
        raise ParameterError("noise_frac must lie in [0, 1)", field="noise_frac")
    if base.n_buildings != 1:
        raise ParameterError("base must be a single series", field="base")
    sigma = noise_frac / 2.0 if noise_sigma is None else float(noise_sigma)
    if sigma < 0:
        raise ParameterError("noise_sigma must be >= 0", field="noise_sigma")

    profile = base.power[0]
    rngs = child_rngs(seed, n_buildings)

    def _building(i: int) -> ConsumptionSeries:
        if noise_frac == 0:
            power = profile.copy()
        else:
            g = _truncated_noise(rngs[i], profile.size, noise_frac, sigma)
            power = profile * (1.0 + g)
        return ConsumptionSeries(base.timestamps, power, base.interval_length, (f"b{i:03d}",))

    with ThreadPoolExecutor(max_workers=workers or get_workers()) as executor:
        members = list(executor.map(_building, range(n_buildings)))
    logger.info(f"🏢 합성 앙상블 {n_buildings} 동 생성 (noise_frac={noise_frac}, seed={seed})")
    return members


# ===================================================================
# 🧮 이산화 / 전이 행렬 추정
# ===================================================================

def discretize(aggregate: ConsumptionSeries, n_states: int) -> tuple[StateSpace, np.ndarray]:
    """[min, max] 등간격 bin, 내부 경계값은 상위 bin, 최댓값은 최상위 bin"""
    if n_states < 2:
        raise ParameterError("n_states must be >= 2", field="n_states")
    if aggregate.n_buildings > 1:
        logger.debug(f"건물 {aggregate.n_buildings} 동을 합산해서 이산화")
        aggregate = aggregate.aggregate()
    power = aggregate.power[0]
    low, high = float(power.min()), float(power.max())
    if not high > low:
        raise DataError("degenerate range")

    space = StateSpace(np.linspace(low, high, n_states + 1))
    path = space.locate(power)
    logger.debug(f"이산화: {n_states} 상태, [{low:.4g}, {high:.4g}] MW")
    return space, path


def _as_paths(paths) -> list[np.ndarray]:
    if isinstance(paths, np.ndarray) and paths.ndim == 1:
        return [paths]
    paths = list(paths)
    if paths and np.ndim(paths[0]) == 0:
        return [np.asarray(paths)]
    return [np.asarray(p) for p in paths]


def estimate_default_matrix(paths: Union[Sequence[int], Sequence[Sequence[int]]],
                            n_states: int) -> TransitionMatrix:
    """
    P̄[β, α] = count(β→α) / count(β→·)
    나가는 전이가 없는 상태는 자기 루프(항등 행)
    """
    if n_states < 2:
        raise ParameterError("n_states must be >= 2", field="n_states")
    counts = np.zeros((n_states, n_states))
    for path in _as_paths(paths):
        path = np.asarray(path, dtype=np.int64)
        if path.size and (path.min() < 0 or path.max() >= n_states):
            raise DataError(f"state index outside [0, {n_states})")
        if path.size >= 2:
            np.add.at(counts, (path[:-1], path[1:]), 1.0)
    if counts.sum() < 1:
        raise DataError("no transitions to count")

    totals = counts.sum(axis=1, keepdims=True)
    unvisited = totals[:, 0] == 0
    rows = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    rows[unvisited, unvisited] = 1.0
    support = counts > 0
    support[unvisited, unvisited] = True
    if unvisited.any():
        logger.warning(f"⚠️ 방문하지 않은 상태 {np.flatnonzero(unvisited).tolist()} 는 자기 루프로 채움")
    return TransitionMatrix(rows, support)


def support_density(matrix: TransitionMatrix) -> float:
    return float(matrix.support_mask.mean())


# ===================================================================
# 💾 행렬 / 상태 공간 파일
# ===================================================================

def save_matrix_json(matrix: TransitionMatrix, path: Union[str, Path]) -> Path:
    return write_json(path, matrix.to_dict())


def load_matrix_json(path: Union[str, Path]) -> TransitionMatrix:
    return TransitionMatrix.from_dict(read_json(path))


def state_space_frame(space: StateSpace) -> pd.DataFrame:
    return pd.DataFrame({
        "state": np.arange(space.n),
        "lower_mw": space.bin_edges[:-1],
        "upper_mw": space.bin_edges[1:],
        "representative_mw": space.representative_power,
    })


def save_state_space_csv(space: StateSpace, path: Union[str, Path]) -> Path:
    return write_csv(path, state_space_frame(space))


def load_state_space_csv(path: Union[str, Path]) -> StateSpace:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in STATE_SPACE_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"missing column(s): {', '.join(missing)}", row=0)
    frame = frame.sort_values("state")
    lower = frame["lower_mw"].to_numpy(dtype=float)
    upper = frame["upper_mw"].to_numpy(dtype=float)
    if not np.allclose(lower[1:], upper[:-1], rtol=0.0, atol=1e-9):
        raise DataError("state-space bins are not contiguous")
    return StateSpace(np.append(lower, upper[-1]))
