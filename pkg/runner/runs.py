"""
관리 명령이 공유하는 실행 로직

명령(management/commands/*.py)은 인자 처리와 종료 코드만 맡고,
실제 추정/벤치마크와 표 구성은 여기서 합니다.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from bench.baselines import (
    Method,
    reference_probability,
    run_method,
    run_plain_mc,
    samples_to_tolerance,
    within_band,
)
from sampling.gaussian import ConstraintSet, NominalGaussian
from sampling.mixture import (
    EstimatorState,
    MixtureWeights,
    analytic_probability,
    sample_mixture_batch,
    union_bounds,
    update_estimate_batch,
)
from sampling.optimizer import TraceRow, run_adaptive, trace_columns
from sampling.streams import make_stream

from .config import RunConfig
from .problems import Problem, quadrature_oracle
from .tables import SCHEMAS, frame_for

logger = logging.getLogger(__name__)


@dataclass
class EstimateOutcome:
    problem: Problem
    method: Method
    samples: int
    pi_hat: float
    std: float
    avg_violated: float
    analytic: bool = False
    x_initial: Optional[np.ndarray] = None
    x_final: Optional[np.ndarray] = None
    trace: List[TraceRow] = field(default_factory=list)

    @property
    def union(self) -> Tuple[float, float]:
        return union_bounds(self.problem.constraints)


def aloe_with_trace(
    g: NominalGaussian,
    constraints: ConstraintSet,
    samples: int,
    batch_size: int,
    rng: np.random.Generator,
) -> Tuple[EstimatorState, MixtureWeights, List[TraceRow]]:
    """ALOE (고정 xᵢ ∝ Πᵢ) 를 배치 단위로 돌리며 trace 기록"""
    weights = MixtureWeights.aloe(constraints)
    state = EstimatorState()
    trace: List[TraceRow] = []
    remaining, batch = samples, 0
    while remaining > 0:
        size = min(batch_size, remaining)
        _, points = sample_mixture_batch(weights, constraints, g, rng, size)
        state, ratio = update_estimate_batch(state, points, weights, constraints)
        trace.append(
            TraceRow(
                batch=batch,
                samples=state.count,
                pi_hat=state.pi_hat,
                std=state.std,
                avg_violated=state.violated_mean,
                v_hat=float(np.var(ratio, ddof=1)) if size > 1 else 0.0,
                eta=0.0,
                x=weights.x,
            )
        )
        remaining -= size
        batch += 1
    return state, weights, trace


def run_estimate(problem: Problem, method: Method, cfg: RunConfig) -> EstimateOutcome:
    """
    단일 추정 실행

    활성 제약이 없거나 평균에서 이미 위반된 분산 0 제약이 있으면 샘플링 없이 보고합니다.
    """
    cs = problem.constraints
    g = problem.gaussian
    rng = make_stream(cfg.seed, "estimate", problem.name, method.value)

    analytic = analytic_probability(cs)
    if analytic is not None:
        logger.warning(f"{problem.name}: 해석적으로 Π={analytic} (샘플링 생략)")
        return EstimateOutcome(
            problem=problem,
            method=method,
            samples=0,
            pi_hat=analytic,
            std=0.0,
            avg_violated=math.nan,
            analytic=True,
        )

    if method is Method.MC:
        result = run_plain_mc(g, cs, cfg.samples, rng, chunk=cfg.mc_chunk)
        return EstimateOutcome(
            problem=problem,
            method=method,
            samples=result.samples,
            pi_hat=result.pi_hat,
            std=result.std,
            avg_violated=math.nan,
        )

    if method is Method.ALOE:
        state, weights, trace = aloe_with_trace(g, cs, cfg.samples, cfg.batch, rng)
        x_initial = x_final = weights.x
    else:
        state, opt, trace = run_adaptive(
            g, cs, cfg.options.objective(method, cfg.samples), rng
        )
        x_initial, x_final = trace[0].x, opt.weights.x

    return EstimateOutcome(
        problem=problem,
        method=method,
        samples=state.count,
        pi_hat=state.pi_hat,
        std=state.std,
        avg_violated=state.violated_mean,
        x_initial=x_initial,
        x_final=x_final,
        trace=trace,
    )


def estimate_frames(outcome: EstimateOutcome, cfg: RunConfig) -> Dict[str, pd.DataFrame]:
    """estimate / weights / trace / trace_weights 표"""
    cs = outcome.problem.constraints
    lower, upper = outcome.union
    ratio = upper / outcome.avg_violated if outcome.avg_violated > 0 else math.nan
    estimate = frame_for(
        "estimate",
        {
            "case": [outcome.problem.name],
            "method": [outcome.method.label],
            "theta_bound": [outcome.problem.theta_bound],
            "samples": [outcome.samples],
            "Pi_hat": [outcome.pi_hat],
            "std": [outcome.std],
            "avg_violated": [outcome.avg_violated],
            "sum_pi_over_avg_violated": [ratio],
            "union_lower": [lower],
            "union_upper": [upper],
            "analytic": [int(outcome.analytic)],
            "seed": [cfg.seed],
        },
    )

    empty = np.full(cs.J, np.nan)
    weights = frame_for(
        "weights",
        {
            "row_label": list(cs.labels),
            "Pi_i": list(cs.tail_prob),
            "x_initial": list(empty if outcome.x_initial is None else outcome.x_initial),
            "x_final": list(empty if outcome.x_final is None else outcome.x_final),
        },
    )

    trace = frame_for("trace", trace_columns(outcome.trace))
    wide: Dict[str, List[Any]] = {"batch": [row.batch for row in outcome.trace]}
    for j in range(cs.J):
        wide[f"x_{j + 1}"] = [float(row.x[j]) for row in outcome.trace]
    trace_weights = frame_for("trace_weights", wide, width=cs.J)
    return {
        "estimate": estimate,
        "weights": weights,
        "trace": trace,
        "trace_weights": trace_weights,
    }


@dataclass(frozen=True)
class Cell:
    """벤치마크 한 칸 (case × θ̄ × method × run)"""

    problem: Problem
    method: Method
    run: int
    oracle_pi: float


def problem_oracle(problem: Problem, cfg: RunConfig) -> Tuple[float, Dict[str, Any]]:
    """
    기준 Π 와 그 출처

    합성 다면체는 구적, 그리드 케이스는 긴 MD-Var 기준 실행을 씁니다.
    """
    analytic = analytic_probability(problem.constraints)
    if analytic is not None:
        return analytic, {"source": "analytic"}
    value = quadrature_oracle(problem)
    if value is not None:
        return value, {"source": "polar-quadrature"}
    reference = reference_probability(
        problem.gaussian,
        problem.constraints,
        cfg.reference_samples,
        seed=cfg.seed,
        key=f"{problem.name}|{problem.theta_bound}",
        options=cfg.options,
    )
    return reference.pi_hat, {
        "source": "reference-run",
        "method": reference.method,
        "samples": reference.samples,
        "std": reference.std,
    }


def run_cell(cell: Cell, cfg: RunConfig) -> Dict[str, Any]:
    problem = cell.problem
    key = f"{problem.name}|{problem.theta_bound}|{cell.run}"
    row: Dict[str, Any] = {
        "case": problem.name,
        "method": cell.method.label,
        "theta_bound": problem.theta_bound,
        "oracle_Pi": cell.oracle_pi,
        "run": cell.run,
        "N": None,
        "Pi_hat": None,
        "std": None,
        "stop_pass": None,
        "wall_ms": None,
        "extrapolated": None,
        "analytic": None,
        "audit_pass": None,
        "error": "",
    }
    try:
        if cfg.to_tolerance:
            result = samples_to_tolerance(
                cell.method,
                problem.gaussian,
                problem.constraints,
                cell.oracle_pi,
                cfg.schedule,
                seed=cfg.seed,
                key=key,
                options=cfg.options,
                audit=cfg.audit,
            )
        else:
            rng = make_stream(cfg.seed, "benchmark", key, cell.method.value)
            result = run_method(
                cell.method, problem.gaussian, problem.constraints, cfg.samples, rng, cfg.options
            )
            passed = cell.oracle_pi > 0 and within_band(result.pi_hat, result.std, cell.oracle_pi)
            result = replace(result, stop_pass=bool(passed))
    except (ValueError, ArithmeticError) as e:
        logger.error(f"벤치마크 칸 실패 - {key} {cell.method.label}: {e}")
        row["error"] = f"{type(e).__name__}: {e}"
        return row

    row.update(
        N=result.samples,
        Pi_hat=result.pi_hat,
        std=result.std,
        stop_pass=result.stop_pass,
        wall_ms=result.wall_ms,
        extrapolated=result.extrapolated,
        analytic=result.analytic,
        audit_pass=result.audit_pass,
    )
    return row


def run_benchmark(cells: List[Cell], cfg: RunConfig) -> List[Dict[str, Any]]:
    """
    모든 칸 실행 (cfg.workers 개 작업자)

    Django 설정을 공유하도록 스레드 백엔드를 쓰고, Parallel 은 제출 순서대로 결과를 돌려주므로
    작업자 수와 무관하게 같은 표가 나옵니다.
    """
    if cfg.workers == 1:
        return [run_cell(cell, cfg) for cell in cells]
    return Parallel(n_jobs=cfg.workers, prefer="threads")(delayed(run_cell)(cell, cfg) for cell in cells)


def benchmark_frames(rows: List[Dict[str, Any]]) -> Dict[str, pd.DataFrame]:
    """benchmark / histogram 표"""
    columns = {name: [row[name] for row in rows] for name in SCHEMAS["benchmark"]}
    benchmark = frame_for("benchmark", columns)

    histogram = frame_for(
        "histogram",
        {
            "case": [row["case"] for row in rows],
            "method": [row["method"] for row in rows],
            "theta_bound": [row["theta_bound"] for row in rows],
            "run": [row["run"] for row in rows],
            "N": [row["N"] for row in rows],
            "Pi_hat": [row["Pi_hat"] for row in rows],
            "oracle_Pi": [row["oracle_Pi"] for row in rows],
            "ratio": [_ratio(row["Pi_hat"], row["oracle_Pi"]) for row in rows],
        },
    )
    return {"benchmark": benchmark, "histogram": histogram}


def _ratio(pi_hat: Optional[float], oracle: float) -> float:
    if pi_hat is None or not oracle > 0:
        return math.nan
    return pi_hat / oracle
