import logging
from typing import Any, Dict, List

from bench.baselines import Method
from bench.synthetic import SyntheticSpec
from runner.base import GridCommand
from runner.config import ConfigError, RunConfig
from runner.problems import build_problem, resolve_case
from runner.runs import Cell, benchmark_frames, problem_oracle, run_benchmark
from runner.tables import write_metadata, write_table

logger = logging.getLogger(__name__)


class Command(GridCommand):
    help = "케이스 × θ̄ × 방법 × 반복 벤치마크 (benchmark/histogram CSV 작성)"

    command_name = "benchmark"
    multiple_cases = True

    def add_command_arguments(self, parser):
        self.add_sampling_arguments(parser, multiple_methods=True)
        parser.add_argument("--runs", type=int, help="칸마다 반복 횟수 R")
        parser.add_argument("--workers", type=int, help="동시에 실행할 칸 수")
        parser.add_argument(
            "--to-tolerance",
            action="store_true",
            default=None,
            help="정지 규칙을 만족하는 가장 작은 N 을 찾음",
        )
        parser.add_argument(
            "--audit", action="store_true", default=None, help="통과한 N 을 2N 에서 다시 확인"
        )
        parser.add_argument("--reference-samples", type=int, help="그리드 케이스 기준 실행 표본 수")

    def run(self, cfg: RunConfig):
        if not cfg.cases:
            raise ConfigError("benchmark 는 --case 가 하나 이상 필요합니다")

        cells: List[Cell] = []
        oracles: List[Dict[str, Any]] = []
        for ref in cfg.cases:
            target = resolve_case(ref, cfg)
            thetas = (None,) if isinstance(target, SyntheticSpec) else cfg.thetas
            for theta in thetas:
                problem = build_problem(target, theta, cfg)
                oracle_pi, source = problem_oracle(problem, cfg)
                logger.info(f"{problem.name} θ̄={theta}: 기준 Π={oracle_pi:.6e} ({source['source']})")
                oracles.append(
                    {"case": problem.name, "theta_bound": theta, "oracle_Pi": oracle_pi, **source}
                )
                cells.extend(
                    Cell(problem=problem, method=Method(method), run=run, oracle_pi=oracle_pi)
                    for method in cfg.methods
                    for run in range(cfg.runs)
                )

        rows = run_benchmark(cells, cfg)
        for schema, frame in benchmark_frames(rows).items():
            write_table(frame, cfg.out / f"{schema}.csv", schema)
        write_metadata(
            cfg.out / "benchmark_meta.json",
            {
                "seed": cfg.seed,
                "methods": list(cfg.methods),
                "runs": cfg.runs,
                "samples": None if cfg.to_tolerance else cfg.samples,
                "to_tolerance": cfg.to_tolerance,
                "schedule": {"start": cfg.schedule_start, "cap": cfg.schedule_cap},
                "oracles": oracles,
            },
        )

        failed = sum(1 for row in rows if row["error"])
        message = f"{len(rows)}칸 완료 → {cfg.out / 'benchmark.csv'}"
        if failed:
            self.stdout.write(self.style.WARNING(f"{message} (실패 {failed}칸)"))
        else:
            self.stdout.write(self.style.SUCCESS(message))
