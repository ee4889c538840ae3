from grid.polytope import polytope_frame
from runner.base import GridCommand
from runner.config import ConfigError, RunConfig
from runner.problems import build_problem, cited_values, parse_synthetic, quadrature_oracle
from runner.tables import write_metadata, write_table
from sampling.mixture import union_bounds


class Command(GridCommand):
    help = "합성 다면체 (regular / degenerate) 생성과 구적 오라클 Π 기록"

    command_name = "generate"

    def run(self, cfg: RunConfig):
        if len(cfg.cases) != 1:
            raise ConfigError("generate 는 --case regular:J:τ 또는 degenerate:J:τ[:seed] 하나가 필요합니다")
        spec = parse_synthetic(cfg.cases[0], cfg)
        if spec is None:
            raise ConfigError(f"합성 다면체 참조가 아닙니다: {cfg.cases[0]!r}")

        problem = build_problem(spec, None, cfg)
        oracle = quadrature_oracle(problem)
        lower, upper = union_bounds(problem.constraints)

        path = write_table(polytope_frame(problem.polytope), cfg.out / "polytope.csv", "polytope")
        write_metadata(
            cfg.out / "metadata.json",
            {
                "case": spec.name,
                "kind": spec.kind,
                "J": spec.J,
                "tau": spec.tau,
                "perturbation": spec.perturbation if spec.kind == "degenerate" else None,
                "seed": spec.seed,
                "normalize": spec.normalize,
                "oracle_Pi": oracle,
                "oracle_source": "polar-quadrature",
                "union_lower": lower,
                "union_upper": upper,
                "cited": cited_values(spec),
            },
        )
        self.stdout.write(self.style.SUCCESS(f"{spec.name}: Π={oracle:.6e} (구적) → {path}"))
