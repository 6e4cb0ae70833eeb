# src/io_utils.py
"""
파일 입출력 헬퍼
- JSON / CSV 쓰기 (재실행 시 바이트 단위로 동일하도록 키 정렬, 고정 float 포맷)
- 번들 산출물을 쓰면서 sha256 을 기록하는 BundleWriter 와 manifest
"""
import hashlib
import json
from pathlib import Path
from typing import Optional, Union

import pandas as pd
from loguru import logger
from pydantic import BaseModel, ValidationError

from .errors import DataError
from .reports import Manifest, ManifestEntry

PathLike = Union[str, Path]
CSV_FLOAT_FORMAT = "%.12g"


def ensure_dir(path: PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ===================================================================
# 📝 쓰기
# ===================================================================

def write_json(path: PathLike, payload) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path


def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


# ===================================================================
# 📖 읽기
# ===================================================================

def read_json(path: PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e


def read_model(path: PathLike, model: type[BaseModel]) -> BaseModel:
    try:
        return model.model_validate(read_json(path))
    except ValidationError as e:
        raise DataError(f"{path}: does not match schema {model.__name__}: {e.errors()[0]['msg']}") from e


# ===================================================================
# 📦 번들 / manifest
# ===================================================================

class BundleWriter:
    """
    out_dir 아래에 산출물을 쓰고 (상대 경로, sha256, 스키마 이름)을 모아 두었다가
    finish() 에서 경로 순으로 정렬한 manifest.json 을 기록
    """

    def __init__(self, out_dir: PathLike):
        self.out_dir = ensure_dir(out_dir)
        self._entries: dict[str, ManifestEntry] = {}

    def json(self, rel_path: str, payload, schema_name: Optional[str] = None) -> Path:
        return self.record(rel_path, schema_name, write_json(self.out_dir / rel_path, payload))

    def csv(self, rel_path: str, frame: pd.DataFrame) -> Path:
        return self.record(rel_path, None, write_csv(self.out_dir / rel_path, frame))

    def record(self, rel_path: str, schema_name: Optional[str] = None, path: Optional[Path] = None) -> Path:
        """다른 곳에서 이미 쓴 파일도 등록 가능"""
        path = path or self.out_dir / rel_path
        if not path.is_file():
            raise DataError(f"declared artifact missing: {rel_path}")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self._entries[rel_path] = ManifestEntry(path=rel_path, sha256=digest, schema_name=schema_name)
        return path

    def finish(self, command: str, seed: int) -> Manifest:
        entries = [self._entries[key] for key in sorted(self._entries)]
        manifest = Manifest(command=command, seed=seed, artifacts=entries)
        write_json(self.out_dir / "manifest.json", manifest)
        logger.info(f"📦 manifest 기록: {len(entries)} 개 산출물")
        return manifest
