import logging

from bench.baselines import Method
from runner.base import GridCommand
from runner.config import ConfigError, RunConfig
from runner.problems import build_problem, resolve_case
from runner.runs import estimate_frames, run_estimate
from runner.tables import write_table

logger = logging.getLogger(__name__)


class Command(GridCommand):
    help = "케이스 하나의 고장 확률 Π 추정 (estimate/weights/trace CSV 작성)"

    command_name = "estimate"

    def add_command_arguments(self, parser):
        self.add_sampling_arguments(parser)

    def run(self, cfg: RunConfig):
        if len(cfg.cases) != 1:
            raise ConfigError("estimate 는 --case 하나가 필요합니다")
        if len(cfg.methods) != 1 or len(cfg.thetas) != 1:
            raise ConfigError("estimate 는 방법과 θ̄ 를 하나씩만 받습니다")

        problem = build_problem(resolve_case(cfg.cases[0], cfg), cfg.thetas[0], cfg)
        logger.info(f"{problem.name}: {problem.constraints.describe()}")
        outcome = run_estimate(problem, Method(cfg.methods[0]), cfg)

        for schema, frame in estimate_frames(outcome, cfg).items():
            write_table(frame, cfg.out / f"{schema}.csv", schema)

        lower, upper = outcome.union
        flag = " (해석적)" if outcome.analytic else ""
        self.stdout.write(
            self.style.SUCCESS(
                f"{problem.name} {outcome.method.label}: Π̂={outcome.pi_hat:.6e} ± {outcome.std:.3e}, "
                f"N={outcome.samples}, 합집합 구간 [{lower:.4e}, {upper:.4e}]{flag}"
            )
        )
