"""
신뢰도 다면체 P = {p : Wp ≤ b}

행 블록 순서는 (AB†C, −AB†C, C, −C), 우변은 (θ̄, θ̄, p̄, −p̲) 입니다.
하한 블록은 p ≥ p̲ 를 −Cp ≤ −p̲ 로 저장합니다.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .cases import LIMIT_SENTINEL, GridCase
from .network import NetworkMatrices

logger = logging.getLogger(__name__)

BLOCKS = ("angle+", "angle-", "gen-upper", "gen-lower")

# 이 값 이하의 행 노름은 0 행으로 간주
_ZERO_ROW_TOL = 1e-14


@dataclass(frozen=True)
class ReliabilityPolytope:
    W: np.ndarray
    b: np.ndarray
    labels: Tuple[str, ...]
    # 센티넬 한계 또는 0 행
    vacuous: np.ndarray

    def __post_init__(self):
        for name in ("W", "b", "vacuous"):
            getattr(self, name).setflags(write=False)

    @property
    def J(self) -> int:
        return int(self.W.shape[0])

    @property
    def n(self) -> int:
        return int(self.W.shape[1])

    @property
    def zero_rows(self) -> np.ndarray:
        return np.linalg.norm(self.W, axis=1) <= _ZERO_ROW_TOL

    def violated(self, points: np.ndarray) -> np.ndarray:
        """(N, J) 위반 여부 행렬 (ωᵀp > b)"""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.W.T > self.b

    def contains(self, points: np.ndarray) -> np.ndarray:
        return ~self.violated(points).any(axis=1)

    def rows_by_label(self) -> Dict[str, Tuple[np.ndarray, float]]:
        return {
            label: (self.W[k].copy(), float(self.b[k]))
            for k, label in enumerate(self.labels)
        }

    def block(self, name: str) -> np.ndarray:
        """블록 이름(angle+ 등)에 해당하는 행 인덱스"""
        if name not in BLOCKS:
            raise KeyError(f"알 수 없는 블록: {name}")
        prefix = name + ":"
        return np.array(
            [k for k, label in enumerate(self.labels) if label.startswith(prefix)],
            dtype=int,
        )


def build_polytope(mats: NetworkMatrices, case: GridCase) -> ReliabilityPolytope:
    """
    선로 위상각 한계와 발전 한계를 하나의 다면체로 구성

    Args:
        mats: build_matrices 결과
        case: 같은 케이스 (한계값, 라벨 출처)

    Returns:
        ReliabilityPolytope: J = 2m + 2n 행
    """
    angle = mats.angle_operator
    theta = np.array([line.theta_max for line in case.lines])
    upper = np.array([bus.upper for bus in case.buses])
    lower = np.array([bus.lower for bus in case.buses])

    W = np.vstack([angle, -angle, mats.C, -mats.C])
    b = np.concatenate([theta, theta, upper, -lower])

    line_tags = [f"L{k}({line.from_bus}-{line.to_bus})" for k, line in enumerate(case.lines)]
    bus_tags = [f"B{bus.id}" for bus in case.buses]
    labels = (
        [f"angle+:{tag}" for tag in line_tags]
        + [f"angle-:{tag}" for tag in line_tags]
        + [f"gen-upper:{tag}" for tag in bus_tags]
        + [f"gen-lower:{tag}" for tag in bus_tags]
    )

    sentinel = np.concatenate(
        [
            np.zeros(2 * case.m, dtype=bool),
            np.array([bus.p_max is None for bus in case.buses]),
            np.array([bus.p_min is None for bus in case.buses]),
        ]
    )
    zero = np.linalg.norm(W, axis=1) <= _ZERO_ROW_TOL
    vacuous = sentinel | zero | (np.abs(b) >= LIMIT_SENTINEL)
    if zero.any():
        logger.info(f"{case.name}: 0 행 {int(zero.sum())}개 (무의미 제약으로 유지)")

    polytope = ReliabilityPolytope(W=W, b=b, labels=tuple(labels), vacuous=vacuous)
    logger.info(
        f"{case.name}: 다면체 구성 - J={polytope.J}, 무의미 제약 {int(vacuous.sum())}개"
    )
    return polytope


def polytope_from_rows(
    rows: Sequence[Tuple[str, np.ndarray, float]],
    vacuous: Union[Sequence[bool], None] = None,
) -> ReliabilityPolytope:
    """(라벨, ω, b) 목록으로 다면체를 재조립"""
    labels = [label for label, _, _ in rows]
    W = np.vstack([np.asarray(omega, dtype=float) for _, omega, _ in rows])
    b = np.array([float(rhs) for _, _, rhs in rows])
    if vacuous is None:
        vacuous = np.linalg.norm(W, axis=1) <= _ZERO_ROW_TOL
    return ReliabilityPolytope(
        W=W, b=b, labels=tuple(labels), vacuous=np.asarray(vacuous, dtype=bool)
    )


def polytope_frame(polytope: ReliabilityPolytope) -> pd.DataFrame:
    """CSV 내보내기용 표 (row_label, b, w_1..w_n)"""
    frame = pd.DataFrame(
        polytope.W, columns=[f"w_{k + 1}" for k in range(polytope.n)]
    )
    frame.insert(0, "b", polytope.b)
    frame.insert(0, "row_label", list(polytope.labels))
    return frame


def polytope_from_frame(frame: pd.DataFrame) -> ReliabilityPolytope:
    weight_columns: List[str] = [c for c in frame.columns if c.startswith("w_")]
    weights = frame[weight_columns].to_numpy(dtype=float)
    rows = [
        (str(label), weights[k], float(rhs))
        for k, (label, rhs) in enumerate(zip(frame["row_label"], frame["b"]))
    ]
    polytope = polytope_from_rows(rows)
    vacuous = polytope.vacuous | (np.abs(polytope.b) >= LIMIT_SENTINEL)
    return ReliabilityPolytope(
        W=polytope.W, b=polytope.b, labels=polytope.labels, vacuous=vacuous
    )

