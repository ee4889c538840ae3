"""
2차원 극좌표 구적 오라클

백색화 좌표 z (p = μ + Σ^{1/2}z) 에서 각도 α 방향의 반직선 t·(cos α, sin α) 위의
실행 가능 구간 [t_lo, t_hi] 를 구하면, 반직선 방향 질량은 ∫ t e^{−t²/2} dt 로 닫힌 형태입니다.
남은 1차원 각도 적분은 활성 면이 바뀌는 각도에서 나눠 scipy quad 로 계산합니다.

- failure_probability_2d: 실패 확률 Π
- variance_2d: 혼합 가중치 x 에서의 추정기 분산 V(x) = E_υ[f·r_x] − Π²
"""

import logging
import math
from typing import Callable, List, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from grid.polytope import ReliabilityPolytope
from sampling.gaussian import ConstraintSet, NominalGaussian

logger = logging.getLogger(__name__)

_EPSREL = 1e-10
_QUAD_LIMIT = 200
_GRID_CHUNK = 1024
# variance_2d 는 면 쌍마다 분할점을 만들므로 작은 J 에만 씀
VARIANCE_MAX_J = 64

Rows = Union[ReliabilityPolytope, ConstraintSet]


class _RayGeometry:
    """백색화 좌표의 면 a_jᵀz ≤ c_j"""

    def __init__(self, g: NominalGaussian, W: np.ndarray, b: np.ndarray):
        if g.n != 2:
            raise ValueError(f"극좌표 오라클은 2차원 전용입니다 (n={g.n})")
        L = g.SigmaSqrt
        if abs(np.linalg.det(L)) < 1e-12:
            raise ValueError("극좌표 오라클은 정칙 공분산이 필요합니다")
        self.A = np.asarray(W, dtype=float) @ L
        self.c = np.asarray(b, dtype=float) - np.asarray(W, dtype=float) @ g.mu

    def coefficients(self, alphas: np.ndarray) -> np.ndarray:
        """(J, K) 행렬 a_j(α) = a_jᵀ(cos α, sin α)"""
        alphas = np.atleast_1d(alphas)
        return np.outer(self.A[:, 0], np.cos(alphas)) + np.outer(self.A[:, 1], np.sin(alphas))

    def limits(self, alphas: np.ndarray):
        """반직선별 (t_lo, t_hi, 상한 면, 하한 면)"""
        a = self.coefficients(alphas)
        c = self.c[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = c / a
        upper = np.where(a > 0, ratio, np.inf)
        lower = np.where(a < 0, ratio, -np.inf)
        # a = 0 이고 c < 0 이면 그 방향 전체가 위반
        blocked = np.any((a == 0) & (c < 0), axis=0)
        t_hi = np.where(blocked, -np.inf, upper.min(axis=0))
        t_lo = np.maximum(lower.max(axis=0), 0.0)
        upper_face = np.where(np.isfinite(upper.min(axis=0)), upper.argmin(axis=0), -1)
        lower_face = np.where(lower.max(axis=0) > 0, lower.argmax(axis=0), -1)
        return t_lo, t_hi, upper_face, lower_face

    def failure(self, alphas: np.ndarray) -> np.ndarray:
        """반직선 방향 실패 질량 (2π 로 나누기 전)"""
        t_lo, t_hi, _, _ = self.limits(alphas)
        empty = t_lo >= t_hi
        with np.errstate(over="ignore", invalid="ignore"):
            mass = -np.expm1(-0.5 * t_lo**2) + np.exp(-0.5 * np.where(empty, 0.0, t_hi) ** 2)
        return np.where(empty, 1.0, mass)

    def keys(self, alphas: np.ndarray) -> np.ndarray:
        """(K, 3) 활성 면 조합 - 이 값이 같은 구간에서 피적분 함수가 매끄러움"""
        t_lo, t_hi, upper_face, lower_face = self.limits(alphas)
        return np.column_stack([upper_face, lower_face, (t_lo >= t_hi).astype(int)])


def _rows(rows: Rows) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(rows, ConstraintSet):
        return rows.omega, rows.b, rows.vacuous
    return rows.W, rows.b, rows.vacuous


def _refine(geometry: _RayGeometry, lo: float, hi: float, key_lo, key_hi) -> float:
    """[lo, hi] 안에서 활성 면이 바뀌는 각도"""
    j, k = int(key_lo[0]), int(key_hi[0])
    if j >= 0 and k >= 0 and j != k and key_lo[1] == key_hi[1] and key_lo[2] == key_hi[2]:
        # 두 상한 면의 비 c/a 가 같아지는 곳: c_j a_k(α) − c_k a_j(α) = 0
        direction = geometry.c[j] * geometry.A[k] - geometry.c[k] * geometry.A[j]

        def swap(alpha: float) -> float:
            return float(direction[0] * math.cos(alpha) + direction[1] * math.sin(alpha))

        f_lo, f_hi = swap(lo), swap(hi)
        if f_lo * f_hi < 0:
            return brentq(swap, lo, hi, xtol=1e-15)

    for _ in range(60):
        if hi - lo < 1e-15:
            break
        mid = 0.5 * (lo + hi)
        if np.array_equal(geometry.keys(np.array([mid]))[0], key_lo):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _face_breakpoints(geometry: _RayGeometry, J: int) -> List[float]:
    count = max(4096, 8 * J)
    grid = np.linspace(0.0, 2.0 * math.pi, count + 1)
    keys = np.vstack(
        [geometry.keys(grid[start : start + _GRID_CHUNK]) for start in range(0, grid.size, _GRID_CHUNK)]
    )
    changed = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1))
    points = [0.0, 2.0 * math.pi]
    for k in changed:
        points.append(_refine(geometry, grid[k], grid[k + 1], keys[k], keys[k + 1]))
    return sorted(set(points))


def _integrate(fn: Callable[[float], float], points: List[float]) -> float:
    total = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        if hi <= lo:
            continue
        value, _ = quad(fn, lo, hi, epsabs=0.0, epsrel=_EPSREL, limit=_QUAD_LIMIT)
        total += value
    return total / (2.0 * math.pi)


def failure_probability_2d(g: NominalGaussian, rows: Rows) -> float:
    """
    2차원 가우시안에서 다면체 밖에 있을 확률

    Args:
        g: 정칙 2차원 공칭 분포
        rows: ReliabilityPolytope 또는 ConstraintSet (무의미 행은 제외)
    """
    W, b, vacuous = _rows(rows)
    keep = ~np.asarray(vacuous, dtype=bool)
    if not keep.any():
        return 0.0
    geometry = _RayGeometry(g, W[keep], b[keep])
    points = _face_breakpoints(geometry, int(keep.sum()))
    value = _integrate(lambda alpha: float(geometry.failure(np.array([alpha]))[0]), points)
    logger.debug(f"구적 오라클 Π={value:.10e} (분할 {len(points) - 1}개)")
    return min(max(value, 0.0), 1.0)


def _pair_breakpoints(geometry: _RayGeometry) -> List[float]:
    """a_j(α) = 0 또는 c_j/a_j = c_k/a_k 가 되는 모든 각도"""
    normals = [geometry.A[j] for j in range(geometry.A.shape[0])]
    J = len(normals)
    for j in range(J):
        for k in range(j + 1, J):
            normals.append(geometry.c[j] * geometry.A[k] - geometry.c[k] * geometry.A[j])
    points = [0.0, 2.0 * math.pi]
    for v in normals:
        if np.linalg.norm(v) == 0:
            continue
        base = math.atan2(v[1], v[0])
        for alpha in (base + 0.5 * math.pi, base - 0.5 * math.pi):
            points.append(alpha % (2.0 * math.pi))
    return sorted(set(points))


def variance_2d(g: NominalGaussian, constraints: ConstraintSet, x: np.ndarray) -> float:
    """
    V(x) = E_υ[f(p)·r_x(p)] − Π² (활성 제약 기준)

    반직선 위에서 위반 집합은 교차점 사이에서 일정하므로 r_x 는 구간별 상수입니다.
    """
    active = constraints.active
    J = int(active.sum())
    if J == 0:
        return 0.0
    if J > VARIANCE_MAX_J:
        raise ValueError(f"variance_2d 는 활성 제약 {VARIANCE_MAX_J}개 이하만 지원합니다 (J={J})")
    x = np.asarray(x, dtype=float)[active]
    inv_pi = np.exp(-constraints.log_tail[active])
    geometry = _RayGeometry(g, constraints.omega[active], constraints.b[active])

    def ray_moments(alpha: float) -> Tuple[float, float]:
        a = geometry.coefficients(np.array([alpha]))[:, 0]
        c = geometry.c
        with np.errstate(divide="ignore", invalid="ignore"):
            crossings = c / a
        cuts = np.unique(crossings[np.isfinite(crossings) & (crossings > 0)])
        edges = np.concatenate([[0.0], cuts, [np.inf]])
        fail = second = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            t = 0.5 * (lo + hi) if np.isfinite(hi) else lo + 1.0
            violated = a * t > c
            if not violated.any():
                continue
            mass = math.exp(-0.5 * lo * lo) - (0.0 if not np.isfinite(hi) else math.exp(-0.5 * hi * hi))
            denominator = float(np.sum(x[violated] * inv_pi[violated]))
            fail += mass
            second += mass / denominator if denominator > 0 else math.inf
        return fail, second

    points = _pair_breakpoints(geometry)
    pi = _integrate(lambda alpha: ray_moments(alpha)[0], points)
    second = _integrate(lambda alpha: ray_moments(alpha)[1], points)
    return second - pi * pi
