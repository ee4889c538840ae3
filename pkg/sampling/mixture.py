"""
혼합 중요도 샘플링 추정기

합성 분포 D = Σᵢ xᵢDᵢ (Dᵢ 는 제약 i 위반으로 조건부화된 공칭 분포) 에서 표본을 뽑고,
중요도 가중치 r(p) = υ(p)/υ_D(p, x) = 1 / Σᵢ (xᵢ/Πᵢ)·1[pᵀωⁱ > bᵢ] 로
실패 확률 Π 의 불편 추정치를 누적합니다.

가중치는 배치 안에서 고정되므로 적응형 실행에서도 추정치가 불편입니다.
"""

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .gaussian import ConstraintSet, NominalGaussian, _conditional_from_uniform

logger = logging.getLogger(__name__)

# 가중치 합 허용 오차
_SIMPLEX_TOL = 1e-12


class VacuousPolytopeError(ValueError):
    """활성 제약이 없어 샘플링할 수 없음 (Π 는 해석적으로 0)"""


class ConstraintNotViolatedError(ValueError):
    """다면체 내부의 점에서 밀도비를 요청"""


def floor_projection(x: np.ndarray, active: np.ndarray, epsilon: float) -> np.ndarray:
    """
    ε 하한 사영

    활성 좌표를 ε 로 자르고, 남은 질량을 자르지 않은 좌표에 비례 배분하는 것을
    새로 잘리는 좌표가 없을 때까지 반복합니다. 비활성 좌표는 정확히 0 입니다.
    """
    x = np.where(active, np.asarray(x, dtype=float), 0.0)
    n_active = int(np.count_nonzero(active))
    if n_active == 0:
        raise VacuousPolytopeError("활성 제약이 없습니다")
    if epsilon < 0 or epsilon * n_active > 1.0 + _SIMPLEX_TOL:
        raise ValueError(f"epsilon={epsilon} 은 활성 제약 {n_active}개에 대해 불가능합니다")

    clipped = np.zeros_like(active, dtype=bool)
    while True:
        free = active & ~clipped
        budget = 1.0 - epsilon * int(np.count_nonzero(clipped))
        mass = float(x[free].sum())
        if not free.any():
            break
        if mass > 0:
            x[free] = x[free] * (budget / mass)
        else:
            x[free] = budget / int(np.count_nonzero(free))
        newly = free & (x < epsilon)
        if not newly.any():
            break
        clipped |= newly
        x[clipped] = epsilon
    x[~active] = 0.0
    return x


@dataclass(frozen=True)
class MixtureWeights:
    """
    혼합 가중치 x 와 하한 ε

    Σx = 1 이며 비활성 제약의 가중치는 정확히 0 입니다.
    ε 하한은 floor_projection 이 보장하고, 여기서는 단체(simplex) 조건만 검사합니다.
    """

    x: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)) or np.any(x < 0):
            raise ValueError("혼합 가중치는 유한한 0 이상의 값이어야 합니다")
        if abs(float(x.sum()) - 1.0) > 1e-9:
            raise ValueError(f"혼합 가중치의 합이 1 이 아닙니다: {float(x.sum())!r}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @classmethod
    def aloe(cls, constraints: ConstraintSet, epsilon: float = 0.0) -> "MixtureWeights":
        """xᵢ ∝ Πᵢ (활성 제약만)"""
        active = constraints.active
        if not active.any():
            raise VacuousPolytopeError("활성 제약이 없어 혼합 가중치를 만들 수 없습니다")
        # Π 의 크기가 수백 자릿수 차이 날 수 있어 로그 공간에서 정규화
        log_pi = np.where(active, constraints.log_tail, -np.inf)
        x = np.exp(log_pi - logsumexp(log_pi[active]))
        return cls(x=floor_projection(x, active, epsilon), epsilon=epsilon)

    @classmethod
    def uniform(cls, constraints: ConstraintSet, epsilon: float = 0.0) -> "MixtureWeights":
        active = constraints.active
        if not active.any():
            raise VacuousPolytopeError("활성 제약이 없어 혼합 가중치를 만들 수 없습니다")
        x = active / float(np.count_nonzero(active))
        return cls(x=floor_projection(x, active, epsilon), epsilon=epsilon)

    @property
    def J(self) -> int:
        return int(self.x.size)

    def satisfies_floor(self, active: np.ndarray) -> bool:
        return bool(
            np.all(self.x[active] >= self.epsilon - _SIMPLEX_TOL)
            and np.all(self.x[~active] == 0.0)
            and abs(float(self.x.sum()) - 1.0) <= _SIMPLEX_TOL * self.J
        )


@dataclass(frozen=True)
class EstimatorState:
    """
    중요도 가중치의 온라인 누적 상태

    Attributes:
        count: 누적 표본 수 k
        mean: 가중치 평균 = Π̂
        m2: 평균 편차 제곱합 (s(Π̂) 용)
        wn_mean: 가중치 × 위반 제약 수의 평균 (violated_mean 은 이것을 Π̂ 로 나눈 값)
        max_weight: 관측된 최대 가중치
        weight_log: 배치별 가중치 벡터 기록 (선택)
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    wn_mean: float = 0.0
    max_weight: float = 0.0
    weight_log: Optional[Tuple[np.ndarray, ...]] = None

    @property
    def pi_hat(self) -> float:
        return self.mean

    @property
    def violated_mean(self) -> float:
        """실패 조건부 분포에서의 위반 제약 수 평균 (ΣΠᵢ / Π 의 추정치)"""
        if self.mean <= 0:
            return 0.0
        return self.wn_mean / self.mean

    @property
    def variance(self) -> float:
        """가중치의 표본 분산"""
        if self.count < 2:
            return 0.0
        return max(self.m2, 0.0) / (self.count - 1)

    @property
    def std(self) -> float:
        """s(Π̂) = √(var / k)"""
        if self.count < 2:
            return 0.0
        return float(np.sqrt(self.variance / self.count))

    def merge(self, other: "EstimatorState") -> "EstimatorState":
        """두 상태의 병렬 병합 (Chan 공식)"""
        if self.weight_log is None and other.weight_log is None:
            log = None
        else:
            log = (self.weight_log or ()) + (other.weight_log or ())
        if other.count == 0:
            return replace(self, weight_log=log)
        if self.count == 0:
            return replace(other, weight_log=log)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / n)
        wn_mean = self.wn_mean + (other.wn_mean - self.wn_mean) * (other.count / n)
        return EstimatorState(
            count=n,
            mean=mean,
            m2=m2,
            wn_mean=wn_mean,
            max_weight=max(self.max_weight, other.max_weight),
            weight_log=log,
        )


def batch_state(
    weights: np.ndarray, violated_counts: np.ndarray, x: Optional[np.ndarray] = None
) -> EstimatorState:
    """
    한 배치의 상태

    첫 가중치를 기준점으로 편차를 누적하므로 가중치가 모두 같으면 평균은 그 값과 정확히 같고 m2 는 0 입니다.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size == 0:
        return EstimatorState(weight_log=None if x is None else ())
    shift = w[0]
    d = w - shift
    d_mean = float(d.mean())
    return EstimatorState(
        count=int(w.size),
        mean=float(shift + d_mean),
        m2=float(np.sum((d - d_mean) ** 2)),
        wn_mean=float(np.mean(w * np.asarray(violated_counts, dtype=float))),
        max_weight=float(w.max()),
        weight_log=None if x is None else (np.array(x, copy=True),),
    )


def _require_active(constraints: ConstraintSet) -> None:
    if not constraints.active.any():
        raise VacuousPolytopeError(
            f"활성 제약이 없습니다 (J={constraints.J}) - 실패 확률은 해석적으로 0 입니다"
        )


def sample_mixture_batch(
    weights: MixtureWeights,
    constraints: ConstraintSet,
    g: NominalGaussian,
    rng: np.random.Generator,
    size: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    혼합 분포에서 size 개 표본

    Returns:
        (선택된 제약 인덱스 (size,), 표본 (size, n))
    """
    _require_active(constraints)
    if weights.J != constraints.J:
        raise ValueError(f"가중치 길이 {weights.J} 가 제약 수 {constraints.J} 와 다릅니다")
    if np.any(weights.x[~constraints.active] > 0):
        raise ValueError("비활성 제약에 양의 가중치가 있습니다")

    indices = rng.choice(constraints.J, size=size, p=weights.x)
    z = rng.standard_normal((size, g.n))
    u = rng.random(size)
    points = np.empty((size, g.n))
    for i in np.unique(indices):
        rows = indices == i
        points[rows] = _conditional_from_uniform(g, constraints[int(i)], z[rows], u[rows])
    return indices, points


def sample_mixture(
    weights: MixtureWeights,
    constraints: ConstraintSet,
    g: NominalGaussian,
    rng: np.random.Generator,
) -> Tuple[int, np.ndarray]:
    """제약 i 를 확률 xᵢ 로 고르고 Dᵢ 에서 표본 하나"""
    indices, points = sample_mixture_batch(weights, constraints, g, rng, 1)
    return int(indices[0]), points[0]


def log_inverse_ratio(
    violated: np.ndarray, x: np.ndarray, constraints: ConstraintSet
) -> np.ndarray:
    """log Σᵢ (xᵢ/Πᵢ)·1ᵢ (활성 제약만), 위반 없음은 −inf"""
    mask = np.atleast_2d(violated) & constraints.active
    with np.errstate(divide="ignore", invalid="ignore"):
        log_terms = np.log(np.asarray(x, dtype=float)) - constraints.log_tail
        terms = np.where(mask, log_terms, -np.inf)
        return logsumexp(terms, axis=1)


def density_ratio_batch(
    points: np.ndarray,
    weights: MixtureWeights,
    constraints: ConstraintSet,
    *,
    allow_inside: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    r(p) 와 (N, J) 위반 행렬

    Raises:
        ConstraintNotViolatedError: allow_inside 가 아니고 활성 제약을 하나도 위반하지 않은 점이 있음
    """
    violated = constraints.violated(points)
    log_den = log_inverse_ratio(violated, weights.x, constraints)
    inside = ~np.isfinite(log_den)
    if inside.any() and not allow_inside:
        raise ConstraintNotViolatedError(
            f"활성 제약을 위반하지 않은 점 {int(inside.sum())}개에서 밀도비를 계산할 수 없습니다"
        )
    ratio = np.where(inside, 0.0, np.exp(-np.where(inside, 0.0, log_den)))
    return ratio, violated


def density_ratio(p: Sequence[float], weights: MixtureWeights, constraints: ConstraintSet) -> float:
    """υ(p)/υ_D(p, x) = 1 / Σᵢ (xᵢ/Πᵢ)·1[pᵀωⁱ > bᵢ]"""
    ratio, _ = density_ratio_batch(np.atleast_2d(p), weights, constraints)
    return float(ratio[0])


def update_estimate_batch(
    state: EstimatorState,
    points: np.ndarray,
    weights: MixtureWeights,
    constraints: ConstraintSet,
    *,
    record_weights: bool = False,
) -> Tuple[EstimatorState, np.ndarray]:
    """
    같은 가중치로 뽑은 배치를 상태에 반영

    Returns:
        (새 상태, 배치의 중요도 가중치)
    """
    ratio, violated = density_ratio_batch(points, weights, constraints)
    counts = np.count_nonzero(violated & constraints.active, axis=1)
    batch = batch_state(ratio, counts, weights.x if record_weights else None)
    return state.merge(batch), ratio


def update_estimate(
    state: EstimatorState,
    p: Sequence[float],
    weights: MixtureWeights,
    constraints: ConstraintSet,
) -> EstimatorState:
    new_state, _ = update_estimate_batch(state, np.atleast_2d(p), weights, constraints)
    return new_state


def union_bounds(constraints: ConstraintSet) -> Tuple[float, float]:
    """(max Πᵢ, Σ Πᵢ) - 무의미 제약 제외"""
    pi = constraints.tail_prob[~constraints.vacuous]
    if pi.size == 0:
        return 0.0, 0.0
    return float(pi.max()), float(pi.sum())


def analytic_probability(constraints: ConstraintSet) -> Optional[float]:
    """
    샘플링 없이 결정되는 실패 확률

    Returns:
        1.0: 분산 0 제약이 평균에서 이미 위반됨
        0.0: 활성 제약이 없음
        None: 샘플링 필요
    """
    certain = ~constraints.vacuous & (constraints.sigma_norm == 0) & (constraints.tail_prob >= 1.0)
    if certain.any():
        return 1.0
    if not constraints.active.any():
        return 0.0
    return None


def estimate_with_schedule(
    g: NominalGaussian,
    constraints: ConstraintSet,
    schedule: Iterable[Tuple[MixtureWeights, int]],
    rng: np.random.Generator,
    *,
    state: Optional[EstimatorState] = None,
    batch_size: Optional[int] = None,
    record_weights: bool = False,
) -> EstimatorState:
    """
    고정된 가중치 일정 [(x¹, n₁), (x², n₂), ...] 으로 추정

    batch_size 가 주어지면 각 구간을 그 크기로 나눠 메모리를 제한합니다.
    """
    state = state or EstimatorState(weight_log=() if record_weights else None)
    for weights, count in schedule:
        if count < 0:
            raise ValueError(f"표본 수는 0 이상이어야 합니다: {count}")
        remaining = int(count)
        step = batch_size or max(remaining, 1)
        while remaining > 0:
            size = min(step, remaining)
            _, points = sample_mixture_batch(weights, constraints, g, rng, size)
            state, _ = update_estimate_batch(
                state, points, weights, constraints, record_weights=record_weights
            )
            remaining -= size
    return state

