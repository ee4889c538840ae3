"""
2차원 합성 다면체 생성기

- regular: J 개 면 ω_j = (sin 2πj/J, cos 2πj/J), 모든 우변이 τ
- degenerate: ω¹ = (0, 1), ωʲ = (ξⱼ, −1−ξⱼ), ξⱼ ~ U[−ε, ε]

공칭 분포는 2차원 표준정규입니다.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from grid.polytope import ReliabilityPolytope, polytope_from_rows
from sampling.gaussian import ConstraintSet, NominalGaussian, constraints_from_polytope
from sampling.streams import make_stream

logger = logging.getLogger(__name__)

SYNTHETIC_KINDS = ("regular", "degenerate")


class SyntheticSpecError(ValueError):
    """잘못된 합성 다면체 설정"""


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    J: int
    tau: float
    perturbation: float = 1e-6
    seed: int = 0
    # degenerate 면을 단위 노름으로 정규화 (우변은 τ 유지)
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise SyntheticSpecError(f"kind 는 {SYNTHETIC_KINDS} 중 하나여야 합니다: {self.kind!r}")
        if isinstance(self.J, bool) or not isinstance(self.J, int):
            raise SyntheticSpecError(f"J 는 정수여야 합니다: {self.J!r}")
        minimum = 3 if self.kind == "regular" else 1
        if self.J < minimum:
            raise SyntheticSpecError(f"{self.kind} 다면체는 J ≥ {minimum} 이어야 합니다 (J={self.J})")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise SyntheticSpecError(f"τ 는 양의 유한값이어야 합니다: {self.tau}")
        if not (self.perturbation > 0 and math.isfinite(self.perturbation)):
            raise SyntheticSpecError(f"perturbation 은 양수여야 합니다: {self.perturbation}")
        if self.seed < 0:
            raise SyntheticSpecError(f"seed 는 0 이상이어야 합니다: {self.seed}")

    @property
    def name(self) -> str:
        tau = f"{self.tau:g}"
        if self.kind == "regular":
            return f"regular:{self.J}:{tau}"
        return f"degenerate:{self.J}:{tau}:{self.seed}"


def synthetic_polytope(spec: SyntheticSpec) -> ReliabilityPolytope:
    """합성 다면체 {p : Wp ≤ τ}"""
    if spec.kind == "regular":
        angles = 2.0 * math.pi * np.arange(1, spec.J + 1) / spec.J
        W = np.column_stack([np.sin(angles), np.cos(angles)])
    else:
        rng = make_stream(spec.seed, "synthetic", spec.kind, spec.J)
        xi = rng.uniform(-spec.perturbation, spec.perturbation, size=spec.J - 1)
        W = np.vstack([np.array([[0.0, 1.0]]), np.column_stack([xi, -1.0 - xi])])
        if spec.normalize:
            W = W / np.linalg.norm(W, axis=1, keepdims=True)

    rows = [(f"face:{j + 1}", W[j], spec.tau) for j in range(spec.J)]
    polytope = polytope_from_rows(rows)
    logger.debug(f"합성 다면체 생성 - {spec.name}, J={polytope.J}")
    return polytope


def generate_polytope(spec: SyntheticSpec) -> Tuple[ConstraintSet, NominalGaussian]:
    """합성 다면체의 제약 집합과 2차원 표준정규 공칭 분포"""
    g = NominalGaussian.standard(2)
    return constraints_from_polytope(g, synthetic_polytope(spec)), g
