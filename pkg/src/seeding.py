# src/seeding.py
"""
시드 분배 유틸리티
설정 파일의 정수 시드 하나에서 단계(stage)/인덱스별 자식 시드를 결정적으로 파생합니다.
워커 수나 스케줄링 순서와 무관하게 같은 결과가 나와야 합니다.
"""
import hashlib
import os
from typing import Optional

import numpy as np
from dotenv import load_dotenv

load_dotenv()

DEFAULT_SEED = 20240101


def resolve_seed(seed: Optional[int] = None) -> int:
    """CLI/설정 값 > 환경변수(DRPRIV_SEED) > 기본값"""
    if seed is not None:
        return int(seed)
    env_seed = os.getenv("DRPRIV_SEED")
    if env_seed:
        return int(env_seed)
    return DEFAULT_SEED


def _stage_key(stage: str) -> int:
    # 단계 이름을 안정적인 32bit 정수로 (파이썬 hash() 는 프로세스마다 달라짐)
    return int.from_bytes(hashlib.sha256(stage.encode("utf-8")).digest()[:4], "little")


def stage_sequence(seed: int, stage: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(_stage_key(stage),))


def stage_seed(seed: int, stage: str) -> int:
    """하위 함수가 정수 시드를 받는 경우용"""
    return int(stage_sequence(seed, stage).generate_state(1, dtype=np.uint32)[0])


def child_rngs(seed: int, count: int, stage: Optional[str] = None) -> list[np.random.Generator]:
    """인덱스 i 의 생성기는 count 와 무관하게 항상 동일"""
    root = stage_sequence(seed, stage) if stage else np.random.SeedSequence(int(seed))
    return [np.random.default_rng(child) for child in root.spawn(count)]


def get_workers() -> int:
    try:
        return max(1, int(os.getenv("DRPRIV_WORKERS", "1")))
    except ValueError:
        return 1
