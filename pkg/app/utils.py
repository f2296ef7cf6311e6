"""工具函数模块"""

import hashlib
import json
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger

from .config import OUTPUT_ROOT
from .linalg import as_matrix

PathLike = Union[str, Path]


def generate_config_hash(payload: Dict[str, Any]) -> str:
    """生成配置哈希，用于输出目录命名"""
    content = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.md5(content.encode()).hexdigest()[:8]


def resolve_output_dir(command: str, payload: Dict[str, Any], output: Optional[PathLike]) -> Path:
    """默认输出目录 OUTPUT_ROOT/<command>-<hash>"""
    out = Path(output) if output else OUTPUT_ROOT / f"{command}-{generate_config_hash(payload)}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"无法序列化类型 {type(value).__name__}")


def write_json(file_path: PathLike, payload: Any) -> None:
    """保存 JSON 文件"""
    try:
        Path(file_path).write_text(
            json.dumps(payload, indent=2, ensure_ascii=False, default=_jsonable) + "\n",
            encoding="utf-8",
        )
        logger.debug(f"写入 {file_path}")
    except Exception as e:
        logger.error(f"保存 JSON 失败 {file_path}: {e}")
        raise


def read_json(file_path: PathLike) -> Any:
    return json.loads(Path(file_path).read_text(encoding="utf-8"))


def write_matrix_csv(file_path: PathLike, M) -> None:
    """矩阵写为无表头 CSV，浮点数使用最短往返表示"""
    M = as_matrix(M)
    pd.DataFrame(M).to_csv(file_path, header=False, index=False, lineterminator="\n")


def read_matrix_csv(file_path: PathLike) -> np.ndarray:
    frame = pd.read_csv(file_path, header=None, float_precision="round_trip", dtype=np.float64)
    return as_matrix(frame.to_numpy(), str(file_path))


def write_frame_csv(file_path: PathLike, frame: pd.DataFrame) -> None:
    frame.to_csv(file_path, index=False, lineterminator="\n")


def read_frame_csv(file_path: PathLike, **kwargs) -> pd.DataFrame:
    return pd.read_csv(file_path, float_precision="round_trip", **kwargs)


@contextmanager
def stopwatch(timings: Dict[str, float], key: str) -> Iterator[None]:
    """累计一段代码的耗时（秒）到 timings[key]"""
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[key] = timings.get(key, 0.0) + time.perf_counter() - start
