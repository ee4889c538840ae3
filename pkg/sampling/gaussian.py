"""
가우시안 핵심 연산

- 꼬리 영역에서 안정적인 표준정규 함수 (Φ, Φ̄, Φ⁻¹, Φ̄⁻¹, log Φ̄)
- 공칭 분포 N(μ, Σ) 와 대칭 제곱근 Σ^{1/2}
- 반공간 제약 {ωᵀp ≥ b} 의 꼬리 확률 Πᵢ
- 반공간으로 조건부화된 가우시안의 정확한 샘플러

꼬리 값은 모두 log Φ̄ 와 Φ̄⁻¹ 를 거쳐 계산하므로 τ 가 37 근처까지 정밀도를 유지합니다.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from grid.cases import GridCase
from grid.polytope import ReliabilityPolytope

logger = logging.getLogger(__name__)

# 이보다 큰 여유(τ)에서는 Φ̄(τ) 가 배정밀도 하한에 닿음
TAIL_LIMIT = 37.0

# Σ^{1/2} 고유값 절단 (λ_max 대비)
SQRT_CUTOFF = 1e-12

# ‖Σ^{1/2}ω‖ 가 이 값 × (1 + ‖ω‖) 이하이면 분산 0 제약
_DEGENERATE_TOL = 1e-13

# nominal_logpdf 의 slack 좌표 허용 편차
_SLACK_TOL = 1e-9

# 샘플러 경계 허용 오차 ωᵀp ≥ b − 1e-9(1+|b|)
BOUNDARY_TOL = 1e-9


class NonFiniteInputError(ValueError):
    """NaN/inf 입력"""


class CovarianceError(ValueError):
    """대칭 반정치가 아닌 공분산"""


class DegenerateConstraintError(ValueError):
    """분산 0 제약에서 조건부 샘플링 시도"""


class TailUnderflowError(ArithmeticError):
    """꼬리 확률이 배정밀도 아래로 떨어짐 (τ > 37)"""

    def __init__(self, index: Optional[int], tau: float):
        self.index = index
        self.tau = tau
        where = "" if index is None else f" (제약 #{index})"
        super().__init__(f"τ={tau:.6g} 가 한계 {TAIL_LIMIT} 를 넘어 꼬리 확률이 언더플로우됩니다{where}")


class SlackDeviationError(ValueError):
    """p 의 slack 좌표가 평균에서 벗어남"""


class StdNormal:
    """표준정규 특수함수 모음 (상태 없음)"""

    @staticmethod
    def cdf(t):
        return special.ndtr(t)

    @staticmethod
    def sf(t):
        """Φ̄(t) = 1 − Φ(t), 뺄셈 없이 계산"""
        return special.ndtr(np.negative(t))

    @staticmethod
    def logsf(t):
        return special.log_ndtr(np.negative(t))

    @staticmethod
    def ppf(q):
        return special.ndtri(q)

    @staticmethod
    def isf(q):
        """Φ̄⁻¹(q)"""
        return np.negative(special.ndtri(q))

    @staticmethod
    def isf_log(log_q):
        """log q 로부터 Φ̄⁻¹(q)"""
        return np.negative(special.ndtri_exp(log_q))


def _check_finite(name: str, value) -> np.ndarray:
    array = np.array(value, dtype=float)
    if not np.all(np.isfinite(array)):
        raise NonFiniteInputError(f"{name} 에 유한하지 않은 값이 있습니다")
    return array


def symmetric_sqrt(Sigma: np.ndarray) -> np.ndarray:
    """고유분해 기반 대칭 PSD 제곱근 (절단 이하 고유값은 0)"""
    eigvals, eigvecs = np.linalg.eigh(Sigma)
    lam_max = float(np.max(np.abs(eigvals))) if eigvals.size else 0.0
    if lam_max > 0 and eigvals.min() < -1e-8 * lam_max:
        raise CovarianceError(f"공분산이 반정치가 아닙니다 (최소 고유값 {eigvals.min():.3e})")
    eigvals = np.where(eigvals > SQRT_CUTOFF * lam_max, eigvals, 0.0)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return 0.5 * (root + root.T)


@dataclass(frozen=True)
class NominalGaussian:
    """
    공칭 주입량 분포 N(μ, Σ)

    Σ 는 특이할 수 있습니다 (slack 행/열, 분산 0 부하).
    slack 이 주어지면 밀도는 slack 을 제외한 축소 공간에서 정의됩니다.
    """

    mu: np.ndarray
    Sigma: np.ndarray
    slack: Optional[int] = None
    SigmaSqrt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = _check_finite("mu", self.mu).reshape(-1)
        Sigma = _check_finite("Sigma", self.Sigma)
        n = mu.size
        if Sigma.shape != (n, n):
            raise CovarianceError(f"Sigma 는 {n}x{n} 이어야 합니다 (받은 모양 {Sigma.shape})")
        if not np.allclose(Sigma, Sigma.T, atol=1e-12 * (1.0 + np.abs(Sigma).max())):
            raise CovarianceError("Sigma 가 대칭이 아닙니다")
        Sigma = 0.5 * (Sigma + Sigma.T)
        root = symmetric_sqrt(Sigma)

        for name, value in (
            ("mu", mu),
            ("Sigma", Sigma),
            ("SigmaSqrt", root),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def standard(cls, n: int) -> "NominalGaussian":
        return cls(mu=np.zeros(n), Sigma=np.eye(n))

    @classmethod
    def for_grid(cls, case: GridCase, sigma_scale: Optional[float] = None) -> "NominalGaussian":
        """
        그리드 케이스의 공칭 분포

        발전기 버스의 표준편차는 c·|p_mean| (c 는 인자, 없으면 케이스 sigma.scale),
        케이스의 sigma.std 가 있으면 그 값을 우선합니다. 부하와 slack 은 분산 0 입니다.
        """
        scale = sigma_scale
        if scale is None:
            scale = case.sigma_scale
        if scale is None:
            raise CovarianceError(f"{case.name}: sigma scale 이 인자에도 케이스에도 없습니다")
        if scale < 0 or not math.isfinite(scale):
            raise CovarianceError(f"sigma scale 은 0 이상의 유한값이어야 합니다: {scale}")

        std = np.zeros(case.n)
        for k, bus in enumerate(case.buses):
            if bus.kind == "slack":
                if bus.id in case.sigma_std:
                    logger.warning(f"{case.name}: slack 버스 {bus.id} 의 sigma.std 는 무시됩니다")
                continue
            if bus.id in case.sigma_std:
                std[k] = case.sigma_std[bus.id]
            elif bus.kind == "generator":
                std[k] = scale * abs(bus.p_mean)

        logger.info(
            f"{case.name}: 공칭 분포 구성 - 변동 버스 {int(np.count_nonzero(std))}개, c={scale}"
        )
        return cls(mu=case.mean_injection, Sigma=np.diag(std**2), slack=case.slack_index)

    @property
    def n(self) -> int:
        return int(self.mu.size)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """(size, n) 공칭 표본"""
        z = rng.standard_normal((size, self.n))
        return self.mu + z @ self.SigmaSqrt


@dataclass(frozen=True)
class HalfspaceConstraint:
    """
    반공간 {ωᵀp ≥ b} 과 그 꼬리 확률

    beta 는 무차원 여유 (b − μᵀω)/‖Σ^{1/2}ω‖ 이고, 분산 0 제약이면 ±inf 입니다.
    """

    omega: np.ndarray
    b: float
    sigma_norm: float
    beta: float
    tail_prob: float
    log_tail: float
    omega_bar: np.ndarray
    index: Optional[int] = None
    label: str = ""

    @property
    def degenerate(self) -> bool:
        return self.sigma_norm == 0.0


def tail_probability(
    g: NominalGaussian,
    omega: Sequence[float],
    b: float,
    *,
    index: Optional[int] = None,
    label: str = "",
) -> HalfspaceConstraint:
    """
    Πᵢ = Φ̄((b − μᵀω)/‖Σ^{1/2}ω‖₂) 계산

    Raises:
        NonFiniteInputError: ω 또는 b 가 유한하지 않음
    """
    omega = _check_finite("omega", omega).reshape(-1)
    b = float(_check_finite("b", b))
    if omega.size != g.n:
        raise ValueError(f"omega 길이 {omega.size} 가 차원 {g.n} 과 다릅니다")

    projected = g.SigmaSqrt @ omega
    sigma_norm = float(np.linalg.norm(projected))
    mean_value = float(g.mu @ omega)

    if sigma_norm <= _DEGENERATE_TOL * (1.0 + float(np.linalg.norm(omega))):
        violated = mean_value > b
        return HalfspaceConstraint(
            omega=omega,
            b=b,
            sigma_norm=0.0,
            beta=-math.inf if violated else math.inf,
            tail_prob=1.0 if violated else 0.0,
            log_tail=0.0 if violated else -math.inf,
            omega_bar=np.zeros_like(omega),
            index=index,
            label=label,
        )

    beta = (b - mean_value) / sigma_norm
    return HalfspaceConstraint(
        omega=omega,
        b=b,
        sigma_norm=sigma_norm,
        beta=beta,
        tail_prob=float(StdNormal.sf(beta)),
        log_tail=float(StdNormal.logsf(beta)),
        omega_bar=projected / sigma_norm,
        index=index,
        label=label,
    )


def _check_samplable(c: HalfspaceConstraint) -> None:
    if c.degenerate:
        raise DegenerateConstraintError(
            f"분산 0 제약 {c.label or c.index} 에서는 조건부 샘플링을 할 수 없습니다"
        )
    if c.beta > TAIL_LIMIT or c.tail_prob <= 0.0:
        raise TailUnderflowError(c.index, c.beta)


def _conditional_from_uniform(
    g: NominalGaussian, c: HalfspaceConstraint, z: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """
    주어진 z ~ N(0, I), u ∈ [0, 1) 로부터 조건부 표본 구성

    y = Φ̄⁻¹((1 − u)·Φ̄(τ)) 를 로그 공간에서 계산하고,
    φ = ω̄y + (I − ω̄ω̄ᵀ)z, p = Σ^{1/2}φ + μ 를 돌려줍니다. u = 0 이면 y = τ 입니다.
    """
    z = np.atleast_2d(z)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = StdNormal.isf_log(np.log1p(-u) + c.log_tail)
    # 반올림으로 τ 아래로 내려가는 것을 막음
    y = np.maximum(y, c.beta)
    along = z @ c.omega_bar
    phi = z + np.outer(y - along, c.omega_bar)
    return g.mu + phi @ g.SigmaSqrt


def sample_conditional(
    g: NominalGaussian, c: HalfspaceConstraint, rng: np.random.Generator
) -> np.ndarray:
    """N(μ, Σ) 를 {pᵀω ≥ b} 로 제한한 분포에서 표본 하나"""
    return sample_conditional_batch(g, c, rng, 1)[0]


def sample_conditional_batch(
    g: NominalGaussian, c: HalfspaceConstraint, rng: np.random.Generator, size: int
) -> np.ndarray:
    """
    조건부 표본 size 개

    Raises:
        DegenerateConstraintError: 분산 0 제약
        TailUnderflowError: τ > 37
    """
    _check_samplable(c)
    z = rng.standard_normal((size, g.n))
    u = rng.random(size)
    return _conditional_from_uniform(g, c, z, u)


def _reduced(g: NominalGaussian, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if g.slack is None:
        return points - g.mu, g.Sigma
    deviation = np.abs(points[:, g.slack] - g.mu[g.slack])
    if np.any(deviation > _SLACK_TOL):
        raise SlackDeviationError(
            f"slack 좌표가 평균에서 {float(deviation.max()):.3e} 벗어났습니다"
        )
    keep = np.arange(g.n) != g.slack
    Sigma = g.Sigma[np.ix_(keep, keep)]
    return (points - g.mu)[:, keep], Sigma


def nominal_logpdf(g: NominalGaussian, p: Sequence[float]) -> float:
    return float(nominal_logpdf_batch(g, p)[0])


def nominal_logpdf_batch(g: NominalGaussian, points: np.ndarray) -> np.ndarray:
    """
    축소(비 slack) 공간의 로그 밀도

    축소 공분산이 특이하면 의사 행렬식과 의사역행렬을 쓰며,
    지지 공간 밖의 점에는 −inf 를 돌려줍니다.
    """
    deltas, Sigma = _reduced(g, points)
    eigvals, eigvecs = np.linalg.eigh(Sigma)
    lam_max = float(np.max(np.abs(eigvals))) if eigvals.size else 0.0
    keep = eigvals > SQRT_CUTOFF * lam_max
    rank = int(keep.sum())

    coords = deltas @ eigvecs
    inside = coords[:, keep]
    outside = coords[:, ~keep]
    quad = np.sum(inside**2 / eigvals[keep], axis=1)
    log_norm = -0.5 * rank * math.log(2.0 * math.pi) - 0.5 * float(np.sum(np.log(eigvals[keep])))
    logpdf = log_norm - 0.5 * quad

    scale = 1.0 + np.linalg.norm(deltas, axis=1)
    off_support = np.linalg.norm(outside, axis=1) > 1e-9 * scale
    return np.where(off_support, -np.inf, logpdf)


@dataclass(frozen=True)
class ConstraintSet:
    """
    다면체의 모든 행에 대한 HalfspaceConstraint 와 벡터화된 배열

    active 는 혼합 분포의 지지에 들어가는 제약입니다:
    무의미 행이 아니고, 분산이 있고, τ ≤ 37 인 제약.
    """

    constraints: Tuple[HalfspaceConstraint, ...]
    vacuous: np.ndarray
    omega: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)
    omega_bar: np.ndarray = field(init=False, repr=False)
    sigma_norm: np.ndarray = field(init=False, repr=False)
    beta: np.ndarray = field(init=False, repr=False)
    tail_prob: np.ndarray = field(init=False, repr=False)
    log_tail: np.ndarray = field(init=False, repr=False)
    active: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cs = self.constraints
        if not cs:
            raise ValueError("제약이 하나 이상 필요합니다")
        vacuous = np.asarray(self.vacuous, dtype=bool).reshape(-1)
        if vacuous.size != len(cs):
            raise ValueError("vacuous 길이가 제약 수와 다릅니다")
        arrays = {
            "vacuous": vacuous,
            "omega": np.vstack([c.omega for c in cs]),
            "b": np.array([c.b for c in cs]),
            "omega_bar": np.vstack([c.omega_bar for c in cs]),
            "sigma_norm": np.array([c.sigma_norm for c in cs]),
            "beta": np.array([c.beta for c in cs]),
            "tail_prob": np.array([c.tail_prob for c in cs]),
            "log_tail": np.array([c.log_tail for c in cs]),
        }
        arrays["active"] = (
            ~vacuous
            & (arrays["sigma_norm"] > 0)
            & (arrays["beta"] <= TAIL_LIMIT)
            & (arrays["tail_prob"] > 0)
        )
        for name, value in arrays.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_constraints(
        cls, constraints: Iterable[HalfspaceConstraint], vacuous: Optional[Sequence[bool]] = None
    ) -> "ConstraintSet":
        constraints = tuple(constraints)
        if vacuous is None:
            vacuous = np.zeros(len(constraints), dtype=bool)
        return cls(constraints=constraints, vacuous=np.asarray(vacuous, dtype=bool))

    def __len__(self) -> int:
        return len(self.constraints)

    def __getitem__(self, index: int) -> HalfspaceConstraint:
        return self.constraints[index]

    @property
    def J(self) -> int:
        return len(self.constraints)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(c.label for c in self.constraints)

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def violated(self, points: np.ndarray, *, tolerant: bool = True) -> np.ndarray:
        """
        (N, J) 위반 행렬

        tolerant 이면 ωᵀp > b − 1e-9(1+|b|) 로 판정해 경계 위의 표본도 위반으로 셉니다.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        values = pts @ self.omega.T
        threshold = self.b - BOUNDARY_TOL * (1.0 + np.abs(self.b)) if tolerant else self.b
        return values > threshold

    def describe(self) -> str:
        active = self.tail_prob[self.active]
        if active.size == 0:
            return f"J={self.J}, 활성 제약 없음"
        return (
            f"J={self.J}, 활성 {active.size}개, "
            f"ΣΠ={float(active.sum()):.4e}, maxΠ={float(active.max()):.4e}"
        )


def constraints_from_polytope(g: NominalGaussian, polytope: ReliabilityPolytope) -> ConstraintSet:
    """
    다면체의 각 행을 위반 반공간 {ωᵀp ≥ b} 으로 바꿔 꼬리 확률 계산
    """
    if polytope.n != g.n:
        raise ValueError(f"다면체 차원 {polytope.n} 과 분포 차원 {g.n} 이 다릅니다")
    constraints: List[HalfspaceConstraint] = [
        tail_probability(g, polytope.W[k], polytope.b[k], index=k, label=polytope.labels[k])
        for k in range(polytope.J)
    ]
    cs = ConstraintSet(constraints=tuple(constraints), vacuous=polytope.vacuous.copy())
    underflow = int(np.count_nonzero(~cs.vacuous & (cs.sigma_norm > 0) & ~cs.active))
    if underflow:
        logger.info(f"τ > {TAIL_LIMIT} 로 제외된 제약 {underflow}개")
    logger.debug(cs.describe())
    return cs
