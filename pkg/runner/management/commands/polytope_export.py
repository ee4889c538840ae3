from grid.polytope import polytope_frame
from runner.base import GridCommand
from runner.config import ConfigError, RunConfig
from runner.problems import build_problem, resolve_case
from runner.tables import write_metadata, write_table


class Command(GridCommand):
    help = "케이스의 신뢰도 다면체 (W, b) 를 CSV 로 내보내기"

    command_name = "polytope_export"

    def run(self, cfg: RunConfig):
        if len(cfg.cases) != 1 or len(cfg.thetas) != 1:
            raise ConfigError("polytope_export 는 --case 와 θ̄ 를 하나씩만 받습니다")
        problem = build_problem(resolve_case(cfg.cases[0], cfg), cfg.thetas[0], cfg)
        polytope = problem.polytope

        path = write_table(polytope_frame(polytope), cfg.out / "polytope.csv", "polytope")
        write_metadata(
            cfg.out / "metadata.json",
            {
                "case": problem.name,
                "theta_bound": problem.theta_bound,
                "J": polytope.J,
                "n": polytope.n,
                "vacuous_rows": [
                    label for label, flag in zip(polytope.labels, polytope.vacuous) if flag
                ],
                "provenance": problem.provenance,
                "seed": cfg.seed,
            },
        )
        self.stdout.write(self.style.SUCCESS(f"{problem.name}: J={polytope.J} 행 → {path}"))
