"""
기준 방법과 정지 규칙 벤치마크

- MC: 공칭 분포에서 직접 샘플링
- ALOE: xᵢ ∝ Πᵢ 고정 가중치 혼합 중요도 샘플링
- MD-Var / MD-KL: mirror descent 적응형 가중치

정지 규칙: Π/2 ≤ Π̂ − s 이고 Π̂ + s ≤ 3Π/2 를 만족하는 가장 작은 N (64 부터 두 배씩).
"""

import logging
import math
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Union

import numpy as np

from grid.polytope import ReliabilityPolytope
from sampling.gaussian import ConstraintSet, NominalGaussian
from sampling.mixture import (
    EstimatorState,
    MixtureWeights,
    analytic_probability,
    estimate_with_schedule,
)
from sampling.optimizer import ObjectiveKind, run_adaptive
from sampling.streams import make_stream

logger = logging.getLogger(__name__)


class Method(str, Enum):
    MC = "mc"
    ALOE = "aloe"
    MD_VAR = "md-var"
    MD_KL = "md-kl"

    @property
    def label(self) -> str:
        return {"mc": "MC", "aloe": "ALOE", "md-var": "MD-Var", "md-kl": "MD-KL"}[self.value]


@dataclass(frozen=True)
class MethodOptions:
    """방법 공통 실행 옵션"""

    batch_size: int = 32
    epsilon: Optional[float] = None
    eta0: float = 1.0
    pi_proxy: str = "union"
    mc_chunk: int = 32768

    def objective(self, method: Method, samples: int) -> ObjectiveKind:
        return ObjectiveKind(
            objective=method.value,
            epsilon=self.epsilon,
            eta0=self.eta0,
            horizon=samples,
            batch_size=self.batch_size,
            pi_proxy=self.pi_proxy,
        )


@dataclass(frozen=True)
class Schedule:
    start: int = 64
    cap: int = 2**22

    def __post_init__(self):
        if self.start < 1 or self.cap < self.start:
            raise ValueError(f"잘못된 표본 수 일정: start={self.start}, cap={self.cap}")

    def sizes(self) -> List[int]:
        sizes = []
        n = self.start
        while n <= self.cap:
            sizes.append(n)
            n *= 2
        return sizes


@dataclass(frozen=True)
class BenchResult:
    """
    Attributes:
        samples: 사용한 표본 수 (extrapolated 이면 기대값 1/Π)
        stop_pass: 정지 규칙 만족 여부 (평가하지 않았으면 None)
        analytic: 샘플링 없이 해석적으로 정해진 값
        audit_pass: 2N 에서 다시 확인한 정지 규칙 (audit 모드)
    """

    method: str
    samples: int
    pi_hat: float
    std: float
    wall_ms: float
    stop_pass: Optional[bool] = None
    avg_violated: float = float("nan")
    extrapolated: bool = False
    analytic: bool = False
    audit_pass: Optional[bool] = None


def within_band(pi_hat: float, std: float, oracle_pi: float) -> bool:
    """Π/2 ≤ Π̂ − s 이고 Π̂ + s ≤ 3Π/2"""
    return 0.5 * oracle_pi <= pi_hat - std and pi_hat + std <= 1.5 * oracle_pi


def _outside(rows: Union[ReliabilityPolytope, ConstraintSet], points: np.ndarray) -> np.ndarray:
    if isinstance(rows, ConstraintSet):
        return rows.violated(points, tolerant=False).any(axis=1)
    return ~rows.contains(points)


def run_plain_mc(
    g: NominalGaussian,
    polytope: Union[ReliabilityPolytope, ConstraintSet],
    N: int,
    rng: np.random.Generator,
    *,
    chunk: int = 32768,
) -> BenchResult:
    """
    Π̂ = 다면체 밖 표본 비율, s = √(Π̂(1−Π̂)/N)
    """
    if N < 1:
        raise ValueError(f"표본 수 N 은 1 이상이어야 합니다: {N}")
    started = time.perf_counter()
    hits = 0
    remaining = N
    while remaining > 0:
        size = min(chunk, remaining)
        hits += int(np.count_nonzero(_outside(polytope, g.sample(rng, size))))
        remaining -= size
    pi_hat = hits / N
    return BenchResult(
        method=Method.MC.label,
        samples=N,
        pi_hat=pi_hat,
        std=math.sqrt(pi_hat * (1.0 - pi_hat) / N),
        wall_ms=(time.perf_counter() - started) * 1e3,
    )


def _analytic_result(method: Method, value: float, N: int, started: float) -> BenchResult:
    return BenchResult(
        method=method.label,
        samples=N,
        pi_hat=value,
        std=0.0,
        wall_ms=(time.perf_counter() - started) * 1e3,
        analytic=True,
    )


def run_static(
    method: Union[Method, str],
    g: NominalGaussian,
    constraints: ConstraintSet,
    N: int,
    rng: np.random.Generator,
    options: MethodOptions = MethodOptions(),
) -> BenchResult:
    """
    혼합 중요도 샘플링 방법 실행

    ALOE 는 xᵢ ∝ Πᵢ 로 고정하고, MD-Var/MD-KL 은 run_adaptive 에 맡깁니다.
    """
    method = Method(method)
    if method is Method.MC:
        raise ValueError("MC 는 run_plain_mc 로 실행합니다")
    if N < 1:
        raise ValueError(f"표본 수 N 은 1 이상이어야 합니다: {N}")
    started = time.perf_counter()

    analytic = analytic_probability(constraints)
    if analytic is not None:
        return _analytic_result(method, analytic, N, started)

    if method is Method.ALOE:
        weights = MixtureWeights.aloe(constraints)
        state: EstimatorState = estimate_with_schedule(
            g, constraints, [(weights, N)], rng, batch_size=options.mc_chunk
        )
    else:
        state, _, _ = run_adaptive(g, constraints, options.objective(method, N), rng)

    return BenchResult(
        method=method.label,
        samples=state.count,
        pi_hat=state.pi_hat,
        std=state.std,
        wall_ms=(time.perf_counter() - started) * 1e3,
        avg_violated=state.violated_mean,
    )


def run_method(
    method: Union[Method, str],
    g: NominalGaussian,
    constraints: ConstraintSet,
    N: int,
    rng: np.random.Generator,
    options: MethodOptions = MethodOptions(),
) -> BenchResult:
    """MC 를 포함한 모든 방법의 단일 실행"""
    method = Method(method)
    if method is Method.MC:
        return run_plain_mc(g, constraints, N, rng, chunk=options.mc_chunk)
    return run_static(method, g, constraints, N, rng, options)


def samples_to_tolerance(
    method: Union[Method, str],
    g: NominalGaussian,
    constraints: ConstraintSet,
    oracle_pi: float,
    schedule: Schedule = Schedule(),
    *,
    seed: int,
    key: str = "",
    options: MethodOptions = MethodOptions(),
    audit: bool = False,
) -> BenchResult:
    """
    정지 규칙을 만족하는 가장 작은 N

    각 N 마다 (seed, key, method, N) 스트림으로 새로 실행합니다.
    cap 까지 실패하면 stop_pass=False 이고, MC 는 기대 표본 수 ⌈1/Π⌉ 를 extrapolated 로 보고합니다.
    """
    method = Method(method)
    if not oracle_pi > 0:
        raise ValueError(f"기준 Π 는 양수여야 합니다: {oracle_pi}")

    def attempt(n: int) -> BenchResult:
        rng = make_stream(seed, "tolerance", key, method.value, n)
        return run_method(method, g, constraints, n, rng, options)

    elapsed = 0.0
    last: Optional[BenchResult] = None
    for n in schedule.sizes():
        last = attempt(n)
        elapsed += last.wall_ms
        if within_band(last.pi_hat, last.std, oracle_pi):
            audit_pass = None
            if audit:
                again = attempt(2 * n)
                audit_pass = within_band(again.pi_hat, again.std, oracle_pi)
                if not audit_pass:
                    logger.warning(f"{method.label}: N={n} 에서 통과했지만 2N 재확인 실패")
            logger.info(f"{method.label}: 정지 규칙 통과 N={n}, Π̂={last.pi_hat:.4e}")
            return replace(last, stop_pass=True, wall_ms=elapsed, audit_pass=audit_pass)

    logger.info(f"{method.label}: cap={schedule.cap} 까지 정지 규칙 미통과")
    if method is Method.MC:
        return replace(
            last,
            samples=int(math.ceil(1.0 / oracle_pi)),
            stop_pass=False,
            extrapolated=True,
            wall_ms=elapsed,
        )
    return replace(last, stop_pass=False, wall_ms=elapsed)


def reference_probability(
    g: NominalGaussian,
    constraints: ConstraintSet,
    samples: int,
    *,
    seed: int,
    key: str = "",
    options: MethodOptions = MethodOptions(),
) -> BenchResult:
    """그리드 케이스의 기준 Π: 긴 MD-Var 실행"""
    rng = make_stream(seed, "reference", key)
    result = run_static(Method.MD_VAR, g, constraints, samples, rng, options)
    logger.info(f"기준 실행 ({key}): Π={result.pi_hat:.6e} ± {result.std:.2e}, N={samples}")
    return result
