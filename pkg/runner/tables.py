"""
출력 표 스키마와 CSV 입출력

모든 표는 쉼표 구분, '.' 소수점, 17 유효숫자 지수 표기, LF 줄바꿈입니다.
read_table 은 헤더가 스키마와 정확히 같은지 확인합니다.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd
from django.conf import settings

logger = logging.getLogger(__name__)

SCHEMAS: Dict[str, Tuple[str, ...]] = {
    "estimate": (
        "case",
        "method",
        "theta_bound",
        "samples",
        "Pi_hat",
        "std",
        "avg_violated",
        "sum_pi_over_avg_violated",
        "union_lower",
        "union_upper",
        "analytic",
        "seed",
    ),
    "weights": ("row_label", "Pi_i", "x_initial", "x_final"),
    "trace": ("batch", "samples", "Pi_hat", "std", "avg_violated", "V_hat", "eta"),
    "benchmark": (
        "case",
        "method",
        "theta_bound",
        "oracle_Pi",
        "N",
        "Pi_hat",
        "std",
        "stop_pass",
        "wall_ms",
        "run",
        "extrapolated",
        "analytic",
        "audit_pass",
        "error",
    ),
    "histogram": ("case", "method", "theta_bound", "run", "N", "Pi_hat", "oracle_Pi", "ratio"),
}

# 고정 열 + 번호 붙은 열 (w_1..w_n, x_1..x_J)
PREFIXED_SCHEMAS: Dict[str, Tuple[Tuple[str, ...], str]] = {
    "polytope": (("row_label", "b"), "w_"),
    "trace_weights": (("batch",), "x_"),
}


class SchemaError(ValueError):
    """표 헤더가 스키마와 다름"""


def float_format() -> str:
    return getattr(settings, "GRID_RELIABILITY", {}).get("FLOAT_FORMAT", "%.16e")


def expected_columns(schema: str, width: Optional[int] = None) -> Tuple[str, ...]:
    if schema in SCHEMAS:
        return SCHEMAS[schema]
    if schema in PREFIXED_SCHEMAS:
        if width is None:
            raise SchemaError(f"{schema} 스키마는 열 개수가 필요합니다")
        fixed, prefix = PREFIXED_SCHEMAS[schema]
        return fixed + tuple(f"{prefix}{k + 1}" for k in range(width))
    raise SchemaError(f"알 수 없는 스키마: {schema}")


def _width(schema: str, columns: Sequence[str]) -> Optional[int]:
    if schema not in PREFIXED_SCHEMAS:
        return None
    fixed, _ = PREFIXED_SCHEMAS[schema]
    return len(columns) - len(fixed)


def frame_for(schema: str, rows: Mapping[str, List[Any]], width: Optional[int] = None) -> pd.DataFrame:
    """열 이름 → 값 목록을 스키마 순서의 DataFrame 으로"""
    columns = expected_columns(schema, width)
    missing = [c for c in columns if c not in rows]
    if missing:
        raise SchemaError(f"{schema}: 누락된 열 {missing}")
    return pd.DataFrame({c: rows[c] for c in columns}, columns=list(columns))


def write_table(frame: pd.DataFrame, path: Path, schema: str) -> Path:
    columns = tuple(frame.columns)
    expected = expected_columns(schema, _width(schema, columns))
    if columns != expected:
        raise SchemaError(f"{schema}: 열 {columns} 이 스키마 {expected} 와 다릅니다")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format(), lineterminator="\n", na_rep="")
    logger.debug(f"{schema} 표 기록 - {path} ({len(frame)}행)")
    return path


def read_table(path: Path, schema: str) -> pd.DataFrame:
    """CSV 를 읽고 헤더를 스키마와 대조"""
    frame = pd.read_csv(path, keep_default_na=True)
    columns = tuple(frame.columns)
    expected = expected_columns(schema, _width(schema, columns))
    if columns != expected:
        raise SchemaError(f"{path}: 열 {columns} 이 {schema} 스키마와 다릅니다")
    return frame


def write_metadata(path: Path, document: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(document, fh, ensure_ascii=False, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path
