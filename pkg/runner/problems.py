"""
케이스 참조 → 추정 문제

케이스 참조는 다음 중 하나입니다.
- 케이스 JSON 경로
- 내장 케이스 이름 (예: two_bus → CASE_DIR/two_bus.json)
- 합성 다면체 "regular:J:τ" 또는 "degenerate:J:τ[:seed]"
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from grid.cases import GridCase, load_case, with_theta_max
from grid.network import build_matrices
from grid.polytope import ReliabilityPolytope, build_polytope
from bench.oracle import failure_probability_2d
from bench.synthetic import SYNTHETIC_KINDS, SyntheticSpec, synthetic_polytope
from sampling.gaussian import (
    ConstraintSet,
    NominalGaussian,
    StdNormal,
    constraints_from_polytope,
)

from .config import ConfigError, RunConfig, project_defaults

logger = logging.getLogger(__name__)

CaseTarget = Union[GridCase, SyntheticSpec]


@dataclass(frozen=True)
class Problem:
    name: str
    theta_bound: Optional[float]
    polytope: ReliabilityPolytope
    gaussian: NominalGaussian
    constraints: ConstraintSet
    synthetic: Optional[SyntheticSpec] = None
    provenance: str = ""


def parse_synthetic(ref: str, cfg: RunConfig) -> Optional[SyntheticSpec]:
    """합성 참조가 아니면 None"""
    parts = ref.split(":")
    if parts[0] not in SYNTHETIC_KINDS:
        return None
    if len(parts) not in (3, 4):
        raise ConfigError(f"합성 케이스 형식은 kind:J:τ[:seed] 입니다: {ref!r}")
    try:
        J = int(parts[1])
        tau = float(parts[2])
        seed = int(parts[3]) if len(parts) == 4 else cfg.seed
    except ValueError as e:
        raise ConfigError(f"합성 케이스 숫자를 읽을 수 없습니다: {ref!r}") from e
    return SyntheticSpec(
        kind=parts[0],
        J=J,
        tau=tau,
        perturbation=cfg.perturbation,
        seed=seed,
        normalize=cfg.normalize,
    )


def resolve_case(ref: str, cfg: RunConfig) -> CaseTarget:
    """
    케이스 참조 해석

    Raises:
        ConfigError / SyntheticSpecError: 형식 오류 (종료 코드 2)
        CaseError: 케이스 파일 오류 (종료 코드 3)
    """
    spec = parse_synthetic(ref, cfg)
    if spec is not None:
        return spec
    path = Path(ref)
    if not path.exists() and not path.suffix:
        builtin = Path(project_defaults().get("CASE_DIR", "")) / f"{ref}.json"
        if builtin.exists():
            path = builtin
    return load_case(path)


def build_problem(target: CaseTarget, theta: Optional[float], cfg: RunConfig) -> Problem:
    if isinstance(target, SyntheticSpec):
        if theta is not None:
            logger.warning(f"{target.name}: 합성 다면체에는 θ̄ 가 적용되지 않습니다")
        polytope = synthetic_polytope(target)
        gaussian = NominalGaussian.standard(2)
        return Problem(
            name=target.name,
            theta_bound=None,
            polytope=polytope,
            gaussian=gaussian,
            constraints=constraints_from_polytope(gaussian, polytope),
            synthetic=target,
            provenance="synthetic",
        )

    case = target if theta is None else with_theta_max(target, theta)
    scale = cfg.sigma_scale
    if scale is None:
        scale = case.sigma_scale if case.sigma_scale is not None else project_defaults().get("SIGMA_SCALE")
    polytope = build_polytope(build_matrices(case), case)
    gaussian = NominalGaussian.for_grid(case, scale)
    return Problem(
        name=case.name,
        theta_bound=theta,
        polytope=polytope,
        gaussian=gaussian,
        constraints=constraints_from_polytope(gaussian, polytope),
        provenance=case.provenance,
    )


def quadrature_oracle(problem: Problem) -> Optional[float]:
    """합성 다면체면 구적 오라클 Π, 그리드 케이스면 None"""
    if problem.synthetic is None:
        return None
    return failure_probability_2d(problem.gaussian, problem.polytope)


def cited_values(spec: SyntheticSpec) -> dict:
    """메타데이터에 함께 남기는 비교용 닫힌 형태 값"""
    if spec.kind == "regular":
        return {
            "circle_limit": math.exp(-0.5 * spec.tau**2),
            "normal_tail": float(StdNormal.sf(spec.tau)),
        }
    return {"two_sided_tail": 2.0 * float(StdNormal.sf(spec.tau))}

