"""
혼합 가중치 적응 (엔트로피 mirror descent)

배치마다 가중치를 고정한 채 표본을 뽑아 추정치를 갱신하고,
배치 평균 확률적 기울기로 곱셈형 가중치 갱신을 한 뒤 ε 하한으로 사영합니다.

기울기는 밀도비 r(p) 와 1ᵢ/Πᵢ 항만으로 계산합니다 (υ(p) 를 직접 평가하지 않음).
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np

from .gaussian import ConstraintSet, NominalGaussian
from .mixture import (
    EstimatorState,
    MixtureWeights,
    _require_active,
    floor_projection,
    log_inverse_ratio,
    sample_mixture_batch,
    union_bounds,
    update_estimate_batch,
)

logger = logging.getLogger(__name__)

PI_PROXIES = ("union", "estimate")

WeightsLike = Union[MixtureWeights, np.ndarray]


class Objective(str, Enum):
    VAR = "md-var"
    KL = "md-kl"


@dataclass(frozen=True)
class ObjectiveKind:
    """
    적응형 실행 설정

    Attributes:
        objective: md-var (분산) 또는 md-kl (KL 발산)
        epsilon: 가중치 하한 ε, None 이면 min(1e-3, 1/(10J))
        eta0: 스텝 크기 배율 η₀ (1 초과는 1 로 고정)
        horizon: 총 표본 수 N
        batch_size: 배치 크기 (배치마다 한 번 갱신)
        pi_proxy: 스텝 크기의 Π 대용값 - union (ΣΠᵢ) 또는 estimate (Π̂)
    """

    objective: Objective = Objective.VAR
    epsilon: Optional[float] = None
    eta0: float = 1.0
    horizon: int = 1000
    batch_size: int = 32
    pi_proxy: str = "union"

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if not (self.eta0 > 0 and math.isfinite(self.eta0)):
            raise ValueError(f"eta0 는 양수여야 합니다: {self.eta0}")
        if self.eta0 > 1.0:
            logger.warning(f"eta0={self.eta0} 는 1 로 제한됩니다")
            object.__setattr__(self, "eta0", 1.0)
        if self.horizon < 1:
            raise ValueError(f"표본 수 N 은 1 이상이어야 합니다: {self.horizon}")
        if self.batch_size < 1:
            raise ValueError(f"배치 크기는 1 이상이어야 합니다: {self.batch_size}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon 은 양수여야 합니다: {self.epsilon}")
        if self.pi_proxy not in PI_PROXIES:
            raise ValueError(f"pi_proxy 는 {PI_PROXIES} 중 하나여야 합니다: {self.pi_proxy!r}")

    @property
    def steps(self) -> int:
        """mirror step 횟수 ⌈N / batch⌉"""
        return -(-self.horizon // self.batch_size)

    def resolve_epsilon(self, n_active: int) -> float:
        if self.epsilon is None:
            return min(1e-3, 1.0 / (10 * n_active))
        if self.epsilon > 1.0 / n_active:
            raise ValueError(
                f"epsilon={self.epsilon} 이 1/J={1.0 / n_active:.4g} 보다 큽니다 (활성 제약 {n_active}개)"
            )
        return self.epsilon


@dataclass(frozen=True)
class OptimizerState:
    weights: MixtureWeights
    iteration: int = 0
    eta: float = 0.0
    v_hat: float = float("nan")


@dataclass(frozen=True)
class TraceRow:
    """배치 하나가 끝난 뒤의 상태 (x 는 그 배치에 쓰인 가중치)"""

    batch: int
    samples: int
    pi_hat: float
    std: float
    avg_violated: float
    v_hat: float
    eta: float
    x: np.ndarray = field(repr=False)


def _as_array(x: WeightsLike) -> np.ndarray:
    if isinstance(x, MixtureWeights):
        return x.x
    return np.asarray(x, dtype=float)


def _log_ratio(points: np.ndarray, x: np.ndarray, constraints: ConstraintSet):
    """(위반 행렬 (K, J), log r_x(p) (K,))"""
    violated = constraints.violated(points) & constraints.active
    return violated, -log_inverse_ratio(violated, x, constraints)


def var_gradient_terms(points: np.ndarray, x: WeightsLike, constraints: ConstraintSet) -> np.ndarray:
    """표본별 −r(p)²·1ᵢ/Πᵢ, 모양 (K, J)"""
    violated, log_r = _log_ratio(np.atleast_2d(points), _as_array(x), constraints)
    with np.errstate(invalid="ignore"):
        log_terms = 2.0 * log_r[:, None] - constraints.log_tail[None, :]
    return np.where(violated, -np.exp(np.where(violated, log_terms, 0.0)), 0.0)


def stochastic_gradient_var(p: np.ndarray, x: WeightsLike, constraints: ConstraintSet) -> np.ndarray:
    """gᵢ = −r(p)²·1[pᵀωⁱ > bᵢ]/Πᵢ"""
    return var_gradient_terms(np.atleast_2d(p), x, constraints)[0]


def batch_gradient_var(points: np.ndarray, x: WeightsLike, constraints: ConstraintSet) -> np.ndarray:
    return var_gradient_terms(points, x, constraints).mean(axis=0)


def var_surrogate(points: np.ndarray, x: WeightsLike, constraints: ConstraintSet) -> float:
    """
    고정 배치에서의 목적함수 mean_k r_x(p_k)

    batch_gradient_var 는 이 함수의 x 에 대한 정확한 기울기입니다. x 에 대해 볼록입니다.
    """
    _, log_r = _log_ratio(np.atleast_2d(points), _as_array(x), constraints)
    return float(np.mean(np.exp(log_r)))


def kl_gradient_terms(
    points: np.ndarray,
    x: WeightsLike,
    constraints: ConstraintSet,
    pi_hat: float,
    proposal: Optional[WeightsLike] = None,
) -> np.ndarray:
    """
    표본별 −(r_q(p)/Π̂)·(1ᵢ/Πᵢ)·r_x(p), 모양 (K, J)

    q 는 표본을 뽑은 가중치(proposal, 기본값 x) 입니다.
    Π̂ ≤ 0 이면 ΣΠᵢ 로 대신합니다.
    """
    points = np.atleast_2d(points)
    x = _as_array(x)
    q = x if proposal is None else _as_array(proposal)
    if not pi_hat > 0:
        pi_hat = union_bounds(constraints)[1]
    violated, log_rx = _log_ratio(points, x, constraints)
    _, log_rq = _log_ratio(points, q, constraints)
    with np.errstate(invalid="ignore"):
        log_terms = (log_rq + log_rx - math.log(pi_hat))[:, None] - constraints.log_tail[None, :]
    return np.where(violated, -np.exp(np.where(violated, log_terms, 0.0)), 0.0)


def stochastic_gradient_kl(
    p: np.ndarray,
    x: WeightsLike,
    constraints: ConstraintSet,
    pi_hat: float,
    proposal: Optional[WeightsLike] = None,
) -> np.ndarray:
    return kl_gradient_terms(np.atleast_2d(p), x, constraints, pi_hat, proposal)[0]


def batch_gradient_kl(
    points: np.ndarray,
    x: WeightsLike,
    constraints: ConstraintSet,
    pi_hat: float,
    proposal: Optional[WeightsLike] = None,
) -> np.ndarray:
    return kl_gradient_terms(points, x, constraints, pi_hat, proposal).mean(axis=0)


def kl_surrogate(
    points: np.ndarray,
    x: WeightsLike,
    constraints: ConstraintSet,
    pi_hat: float,
    proposal: Optional[WeightsLike] = None,
) -> float:
    """
    자기 정규화 KL 목적함수 −mean_k (r_q/Π̂)·log Σⱼ xⱼ1ⱼ/Πⱼ (x 무관 상수 제외)
    """
    points = np.atleast_2d(points)
    x = _as_array(x)
    q = x if proposal is None else _as_array(proposal)
    if not pi_hat > 0:
        pi_hat = union_bounds(constraints)[1]
    _, log_rx = _log_ratio(points, x, constraints)
    _, log_rq = _log_ratio(points, q, constraints)
    inside = ~np.isfinite(log_rq)
    weights = np.where(inside, 0.0, np.exp(np.where(inside, 0.0, log_rq))) / pi_hat
    return float(np.mean(np.where(inside, 0.0, weights * log_rx)))


def mirror_step(state: OptimizerState, g: np.ndarray) -> OptimizerState:
    """
    xᵢ ← xᵢ·exp(−η gᵢ) / Σⱼ xⱼ·exp(−η gⱼ), 이어서 ε 하한 사영

    지수는 최댓값을 빼고 계산합니다. 0 인 좌표(비활성)는 0 으로 남습니다.
    """
    g = np.asarray(g, dtype=float)
    x = state.weights.x
    if g.shape != x.shape:
        raise ValueError(f"기울기 길이 {g.size} 가 가중치 길이 {x.size} 와 다릅니다")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("기울기에 유한하지 않은 값이 있습니다")

    active = x > 0
    logits = np.full_like(x, -np.inf)
    logits[active] = np.log(x[active]) - state.eta * g[active]
    logits -= logits[active].max()
    updated = np.exp(logits)
    updated /= updated.sum()
    projected = floor_projection(updated, active, state.weights.epsilon)
    return replace(
        state,
        weights=MixtureWeights(x=projected, epsilon=state.weights.epsilon),
        iteration=state.iteration + 1,
    )


def step_size(k: int, cfg: ObjectiveKind, upper_bound_pi: float, J: int) -> float:
    """
    ηᵏ = η₀·ε·Π⁻¹·√(log J / (5N)) (상수 일정)

    Π 자리에는 계산 가능한 상한 (기본 ΣΠᵢ, 1 로 제한) 을 넣고, N 은 mirror step 횟수입니다.
    """
    if not upper_bound_pi > 0:
        raise ValueError(f"Π 상한은 양수여야 합니다: {upper_bound_pi}")
    if J < 2:
        return 0.0
    epsilon = cfg.resolve_epsilon(J)
    pi = min(float(upper_bound_pi), 1.0)
    return min(cfg.eta0, 1.0) * epsilon / pi * math.sqrt(math.log(J) / (5.0 * cfg.steps))


def run_adaptive(
    g: NominalGaussian,
    constraints: ConstraintSet,
    cfg: ObjectiveKind,
    rng: np.random.Generator,
    *,
    initial: Optional[MixtureWeights] = None,
    record_weights: bool = False,
) -> Tuple[EstimatorState, OptimizerState, List[TraceRow]]:
    """
    적응형 혼합 중요도 샘플링

    x⁰ᵢ ∝ Πᵢ 에서 시작해 배치마다 표본 → 추정치 갱신 → 배치 평균 기울기 → mirror step 을 반복합니다.

    Returns:
        (최종 추정 상태, 최종 최적화 상태, 배치별 trace)
    """
    _require_active(constraints)
    n_active = int(np.count_nonzero(constraints.active))
    epsilon = cfg.resolve_epsilon(n_active)
    if initial is None:
        weights = MixtureWeights.aloe(constraints, epsilon)
    else:
        weights = MixtureWeights(
            x=floor_projection(initial.x, constraints.active, epsilon), epsilon=epsilon
        )
    _, union_upper = union_bounds(constraints)

    opt = OptimizerState(weights=weights)
    state = EstimatorState(weight_log=() if record_weights else None)
    trace: List[TraceRow] = []
    remaining = cfg.horizon

    for k in range(cfg.steps):
        size = min(cfg.batch_size, remaining)
        x = opt.weights.x
        _, points = sample_mixture_batch(opt.weights, constraints, g, rng, size)
        state, ratio = update_estimate_batch(
            state, points, opt.weights, constraints, record_weights=record_weights
        )
        v_hat = float(np.var(ratio, ddof=1)) if size > 1 else 0.0

        use_estimate = cfg.pi_proxy == "estimate" and state.pi_hat > 0
        eta = step_size(k, cfg, state.pi_hat if use_estimate else union_upper, n_active)
        if cfg.objective is Objective.VAR:
            grad = batch_gradient_var(points, x, constraints)
        else:
            grad = batch_gradient_kl(points, x, constraints, state.pi_hat)

        trace.append(
            TraceRow(
                batch=k,
                samples=state.count,
                pi_hat=state.pi_hat,
                std=state.std,
                avg_violated=state.violated_mean,
                v_hat=v_hat,
                eta=eta,
                x=x,
            )
        )
        opt = mirror_step(replace(opt, eta=eta, v_hat=v_hat), grad)
        remaining -= size

    logger.info(
        f"{cfg.objective.value}: Π̂={state.pi_hat:.6e}, s={state.std:.3e}, "
        f"N={state.count}, 배치 {cfg.steps}개"
    )
    return state, opt, trace


def trace_columns(trace: List[TraceRow]) -> dict:
    """trace 를 열 이름 → 값 목록으로"""
    return {
        "batch": [row.batch for row in trace],
        "samples": [row.samples for row in trace],
        "Pi_hat": [row.pi_hat for row in trace],
        "std": [row.std for row in trace],
        "avg_violated": [row.avg_violated for row in trace],
        "V_hat": [row.v_hat for row in trace],
        "eta": [row.eta for row in trace],
    }
