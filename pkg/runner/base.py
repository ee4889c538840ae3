"""
관리 명령 공통 베이스

공통 플래그를 등록하고, 도메인 예외를 종료 코드로 바꿉니다.
  2: 설정 오류  3: 케이스 오류  4: 수치 오류
"""

import logging
from typing import Any, Dict

from django.core.management.base import BaseCommand, CommandError

from bench.synthetic import SyntheticSpecError
from grid.cases import CaseError
from grid.network import SingularNetworkError
from sampling.gaussian import (
    CovarianceError,
    DegenerateConstraintError,
    NonFiniteInputError,
    SlackDeviationError,
    TailUnderflowError,
)
from sampling.mixture import ConstraintNotViolatedError, VacuousPolytopeError

from .config import ConfigError, RunConfig, build_config
from .tables import SchemaError

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_CASE = 3
EXIT_NUMERICAL = 4

# 위에서부터 먼저 맞는 것을 씁니다 (대부분 ValueError 하위 클래스)
_EXIT_CODES = (
    ((CaseError, SingularNetworkError, SlackDeviationError, CovarianceError), EXIT_CASE),
    ((ConfigError, SyntheticSpecError, SchemaError), EXIT_CONFIG),
    (
        (
            TailUnderflowError,
            DegenerateConstraintError,
            NonFiniteInputError,
            VacuousPolytopeError,
            ConstraintNotViolatedError,
            ArithmeticError,
        ),
        EXIT_NUMERICAL,
    ),
)


def exit_code_for(error: Exception) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(error, types):
            return code
    # 나머지 ValueError 는 입력 값 문제
    return EXIT_CONFIG if isinstance(error, ValueError) else EXIT_NUMERICAL


class GridCommand(BaseCommand):
    """
    estimate / benchmark / generate / polytope_export 의 공통 부모

    하위 클래스는 command_name 과 run(cfg) 만 정의합니다.
    """

    command_name = ""
    multiple_cases = False

    def add_arguments(self, parser):
        parser.add_argument("--config", help="설정 파일 (JSON). 플래그가 우선합니다")
        parser.add_argument("--seed", type=int, help="난수 시드 (필수)")
        parser.add_argument(
            "--case",
            action="append" if self.multiple_cases else "store",
            help="케이스 JSON 경로, 내장 케이스 이름, 또는 regular:J:τ / degenerate:J:τ[:seed]",
        )
        parser.add_argument("--out", help="출력 디렉터리")
        parser.add_argument("--sigma-scale", type=float, help="σᵢ = c·|p̄ᵘᵢ| 의 c")
        parser.add_argument(
            "--theta-max",
            type=float,
            action="append",
            help="모든 선로의 위상각 한계를 이 값(라디안)으로 덮어씀. 여러 번 주면 스윕",
        )
        parser.add_argument("--perturbation", type=float, help="degenerate 합성 다면체의 ξ 범위")
        parser.add_argument(
            "--normalize",
            action="store_true",
            default=None,
            help="degenerate 합성 다면체의 행을 단위 길이로 정규화",
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def add_sampling_arguments(self, parser, *, multiple_methods: bool = False):
        parser.add_argument(
            "--method",
            action="append" if multiple_methods else "store",
            choices=["mc", "aloe", "md-var", "md-kl"],
            help="추정 방법",
        )
        parser.add_argument("--samples", type=int, help="표본 수 N")
        parser.add_argument("--batch", type=int, help="mirror step 당 표본 수")
        parser.add_argument("--epsilon", type=float, help="가중치 하한 ε")
        parser.add_argument("--eta0", type=float, help="스텝 크기 배율 η₀ (1 이하)")
        parser.add_argument("--pi-proxy", choices=["union", "estimate"], help="스텝 크기의 Π 대체값")

    def handle(self, *args, **options):
        try:
            cfg = build_config(self.command_name, self._flags(options))
            return self.run(cfg)
        except CommandError:
            raise
        except (ValueError, ArithmeticError, RuntimeError) as e:
            code = exit_code_for(e)
            logger.error(f"{self.command_name} 실패 (종료 코드 {code}) - {type(e).__name__}: {e}")
            raise CommandError(f"{type(e).__name__}: {e}", returncode=code) from e

    def run(self, cfg: RunConfig):
        raise NotImplementedError

    @staticmethod
    def _flags(options: Dict[str, Any]) -> Dict[str, Any]:
        return {key.replace("-", "_"): value for key, value in options.items()}
