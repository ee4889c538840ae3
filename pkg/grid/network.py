"""
DC 조류 네트워크 행렬 (A, B, B†, C)
"""

import logging
from dataclasses import dataclass

import numpy as np

from .cases import GridCase

logger = logging.getLogger(__name__)

# Moore-Penrose 의사역행렬 고유값 절단 (λ_max 대비)
PINV_CUTOFF = 1e-9


class SingularNetworkError(RuntimeError):
    """축소 B 행렬이 특이 (비연결 그래프)"""


@dataclass(frozen=True)
class NetworkMatrices:
    """
    Attributes:
        A: 접속 행렬 (m×n), 작은 인덱스 버스가 +1
        B: 서셉턴스 가중 라플라시안 (n×n)
        Bdag: B 의 Moore-Penrose 의사역행렬
        C: slack 축소 행렬 (n×n)
    """

    A: np.ndarray
    B: np.ndarray
    Bdag: np.ndarray
    C: np.ndarray
    slack: int

    def __post_init__(self):
        for name in ("A", "B", "Bdag", "C"):
            getattr(self, name).setflags(write=False)

    @property
    def angle_operator(self) -> np.ndarray:
        """A·B†·C: 주입량 → 선로 위상각 차"""
        return self.A @ self.Bdag @ self.C


def incidence_matrix(case: GridCase) -> np.ndarray:
    A = np.zeros((case.m, case.n))
    for k, line in enumerate(case.lines):
        i, j = case.index_of(line.from_bus), case.index_of(line.to_bus)
        lo, hi = min(i, j), max(i, j)
        A[k, lo] = 1.0
        A[k, hi] = -1.0
    return A


def slack_reduction_matrix(n: int, slack: int) -> np.ndarray:
    C = np.eye(n)
    C[slack, :] = -1.0
    C[:, slack] = -1.0
    C[slack, slack] = 0.0
    return C


def pseudo_inverse(B: np.ndarray) -> np.ndarray:
    """대칭 고유분해 기반 Moore-Penrose 의사역행렬"""
    eigvals, eigvecs = np.linalg.eigh(B)
    lam_max = float(np.max(np.abs(eigvals)))
    keep = np.abs(eigvals) > PINV_CUTOFF * lam_max
    inv = np.zeros_like(eigvals)
    inv[keep] = 1.0 / eigvals[keep]
    Bdag = (eigvecs * inv) @ eigvecs.T
    return 0.5 * (Bdag + Bdag.T)


def build_matrices(case: GridCase) -> NetworkMatrices:
    """
    케이스로부터 A, B, B†, C 를 구성

    B = Aᵀ diag(b) A 로 조립하므로 대칭이며 행 합이 0 입니다.
    """
    A = incidence_matrix(case)
    b = np.array([line.susceptance for line in case.lines])
    B = A.T @ (b[:, None] * A)

    slack = case.slack_index
    # 연결 그래프라면 slack 을 뺀 축소 행렬은 정칙
    reduced = np.delete(np.delete(B, slack, axis=0), slack, axis=1)
    if np.linalg.matrix_rank(reduced) < case.n - 1:
        raise SingularNetworkError(
            f"{case.name}: slack 을 제거한 B 행렬이 특이합니다 (그리드 비연결 가능성)"
        )

    Bdag = pseudo_inverse(B)
    C = slack_reduction_matrix(case.n, slack)
    logger.debug(f"{case.name}: 네트워크 행렬 구성 완료 (n={case.n}, m={case.m})")
    return NetworkMatrices(A=A, B=B, Bdag=Bdag, C=C, slack=slack)
