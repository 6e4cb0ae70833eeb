import json

import numpy as np
import pytest

from src.models import TransitionMatrix, UtilitySchedule


def random_matrix(rng: np.random.Generator, n: int, concentration: float = 2.0) -> TransitionMatrix:
    rows = rng.dirichlet(np.full(n, concentration), size=n)
    rows /= rows.sum(axis=1, keepdims=True)
    return TransitionMatrix(rows, np.ones((n, n), dtype=bool))


def random_instance(rng: np.random.Generator, n: int, horizon: int, scale: float = 1.0):
    p_bar = random_matrix(rng, n)
    u = UtilitySchedule(rng.uniform(-scale, scale, size=(horizon, n)))
    gamma = float(rng.uniform(0.5, 2.0))
    return p_bar, u, gamma


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def three_state():
    """지지집합이 모두 열린 3 상태 기본 행렬"""
    rows = np.array([
        [0.5, 0.3, 0.2],
        [0.25, 0.5, 0.25],
        [0.2, 0.3, 0.5],
    ])
    return TransitionMatrix(rows, np.ones((3, 3), dtype=bool))


@pytest.fixture
def write_text(tmp_path):
    def _write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write


@pytest.fixture
def small_config(tmp_path):
    """빠르게 끝나는 합성 인스턴스 설정 (6 상태, 16 시점)"""
    def _config(**overrides):
        payload = {
            "data": {"n_states": 6, "n_buildings": 10, "synthetic_days": 7},
            "event": {"start": 8, "end": 12, "lead_time": 2, "incentive": 50.0, "tariff": 30.0},
            "privacy": {"k": 50, "h": 0.03, "delta": 0.05, "method": "taylor", "accounting_samples": 2000},
            "sweep": {"k_values": [25, 50], "methods": ["taylor", "digamma"]},
            "gamma": 15.0,
            "horizon": 16,
            "seed": 7,
        }
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(payload.get(key), dict):
                payload[key] = {**payload[key], **value}
            else:
                payload[key] = value
        path = tmp_path / "config.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path
    return _config
