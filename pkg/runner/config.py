"""
실행 설정 (RunConfig)

설정 파일(JSON) 위에 명령행 플래그를 덮어써서 만듭니다. 플래그가 우선입니다.
기본값은 settings.GRID_RELIABILITY 에서 읽습니다.
"""

import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from django.conf import settings

from bench.baselines import Method, MethodOptions, Schedule
from sampling.optimizer import PI_PROXIES

logger = logging.getLogger(__name__)

COMMANDS = ("estimate", "benchmark", "generate", "polytope_export")


class ConfigError(ValueError):
    """잘못된 실행 설정"""


def project_defaults() -> Dict[str, Any]:
    return dict(getattr(settings, "GRID_RELIABILITY", {}))


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int
    cases: Tuple[str, ...] = ()
    methods: Tuple[str, ...] = (Method.MD_VAR.value,)
    samples: int = 1000
    batch: int = 32
    epsilon: Optional[float] = None
    eta0: float = 1.0
    sigma_scale: Optional[float] = None
    theta_max: Tuple[float, ...] = ()
    runs: int = 1
    out: Path = Path("out")
    workers: int = 1
    pi_proxy: str = "union"
    to_tolerance: bool = False
    audit: bool = False
    reference_samples: int = 100_000
    perturbation: float = 1e-6
    normalize: bool = False
    mc_chunk: int = 32768
    schedule_start: int = 64
    schedule_cap: int = 2**22

    @property
    def options(self) -> MethodOptions:
        return MethodOptions(
            batch_size=self.batch,
            epsilon=self.epsilon,
            eta0=self.eta0,
            pi_proxy=self.pi_proxy,
            mc_chunk=self.mc_chunk,
        )

    @property
    def schedule(self) -> Schedule:
        return Schedule(start=self.schedule_start, cap=self.schedule_cap)

    @property
    def thetas(self) -> Tuple[Optional[float], ...]:
        """θ̄ 스윕 (없으면 케이스 값 그대로 한 번)"""
        return self.theta_max or (None,)


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"command"}

# 설정 파일 / 플래그 이름 → RunConfig 필드
_ALIASES = {"case": "cases", "method": "methods", "config": None}

# BaseCommand 가 넘기는 공통 옵션(verbosity 등)과 구분하기 위한 플래그 목록
_CLI_FLAGS = CONFIG_KEYS | set(_ALIASES)


def _normalize_key(key: str) -> Optional[str]:
    name = key.replace("-", "_")
    if name in _ALIASES:
        return _ALIASES[name]
    if name not in CONFIG_KEYS:
        raise ConfigError(f"알 수 없는 설정 키: {key!r}")
    return name


def load_config_file(path: Path) -> Dict[str, Any]:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            document = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"설정 파일이 없습니다: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"설정 파일 JSON 파싱 실패 ({path}): {e}") from e
    if not isinstance(document, Mapping):
        raise ConfigError("설정 파일의 최상위는 객체여야 합니다")
    return dict(document)


def _as_tuple(value: Any) -> Tuple:
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def _positive_int(name: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{name} 는 1 이상의 정수여야 합니다 (받은 값: {value!r})")
    return value


def _positive_float(name: str, value: Any, *, allow_zero: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} 는 숫자여야 합니다 (받은 값: {value!r})")
    value = float(value)
    ok = value >= 0 if allow_zero else value > 0
    if not (ok and math.isfinite(value)):
        raise ConfigError(f"{name} 는 {'0 이상' if allow_zero else '양'}의 유한값이어야 합니다: {value}")
    return value


def build_config(command: str, flags: Mapping[str, Any]) -> RunConfig:
    """
    설정 파일 + 플래그 → 검증된 RunConfig

    Args:
        command: COMMANDS 중 하나
        flags: 명령행 옵션 (None 은 지정하지 않은 것으로 취급)

    Raises:
        ConfigError: 알 수 없는 키, 누락된 seed, 범위 위반
    """
    if command not in COMMANDS:
        raise ConfigError(f"알 수 없는 명령: {command!r}")

    defaults = project_defaults()
    values: Dict[str, Any] = {
        "batch": defaults.get("BATCH_SIZE", 32),
        "epsilon": defaults.get("EPSILON"),
        "eta0": defaults.get("ETA0", 1.0),
        "pi_proxy": defaults.get("PI_PROXY", "union"),
        "mc_chunk": defaults.get("MC_CHUNK", 32768),
        "schedule_start": defaults.get("SCHEDULE_START", 64),
        "schedule_cap": defaults.get("SCHEDULE_CAP", 2**22),
        "reference_samples": defaults.get("REFERENCE_SAMPLES", 100_000),
        "runs": defaults.get("RUNS", 1),
        "workers": defaults.get("WORKERS", 1),
    }

    config_path = flags.get("config")
    layers = [load_config_file(config_path)] if config_path else []
    layers.append({k: v for k, v in flags.items() if k in _CLI_FLAGS and v is not None})
    for layer in layers:
        for key, value in layer.items():
            name = _normalize_key(key)
            if name is not None:
                values[name] = value

    if values.get("seed") is None:
        raise ConfigError("seed 는 필수입니다 (--seed 또는 설정 파일의 seed)")
    return _validated(command, values)


def _validated(command: str, values: Dict[str, Any]) -> RunConfig:
    seed = values["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed 는 0 이상의 정수여야 합니다 (받은 값: {seed!r})")

    cases = tuple(str(c) for c in _as_tuple(values.get("cases")))
    methods = tuple(str(m).lower() for m in _as_tuple(values.get("methods"))) or (
        Method.MD_VAR.value,
    )
    for method in methods:
        try:
            Method(method)
        except ValueError as e:
            choices = ", ".join(m.value for m in Method)
            raise ConfigError(f"알 수 없는 방법 {method!r} (가능: {choices})") from e

    thetas = tuple(
        _positive_float("theta_max", t) for t in _as_tuple(values.get("theta_max"))
    )
    epsilon = values.get("epsilon")
    sigma_scale = values.get("sigma_scale")
    pi_proxy = values.get("pi_proxy", "union")
    if pi_proxy not in PI_PROXIES:
        raise ConfigError(f"pi_proxy 는 {PI_PROXIES} 중 하나여야 합니다: {pi_proxy!r}")

    cap = _positive_int("schedule_cap", values["schedule_cap"])
    start = _positive_int("schedule_start", values["schedule_start"])
    if cap < start:
        raise ConfigError(f"schedule_cap({cap}) 이 schedule_start({start}) 보다 작습니다")

    return RunConfig(
        command=command,
        seed=seed,
        cases=cases,
        methods=methods,
        samples=_positive_int("samples", values.get("samples", 1000)),
        batch=_positive_int("batch", values["batch"]),
        epsilon=None if epsilon is None else _positive_float("epsilon", epsilon),
        eta0=_positive_float("eta0", values["eta0"]),
        sigma_scale=(
            None
            if sigma_scale is None
            else _positive_float("sigma_scale", sigma_scale, allow_zero=True)
        ),
        theta_max=thetas,
        runs=_positive_int("runs", values["runs"]),
        out=Path(values.get("out") or "out"),
        workers=_positive_int("workers", values["workers"]),
        pi_proxy=pi_proxy,
        to_tolerance=bool(values.get("to_tolerance", False)),
        audit=bool(values.get("audit", False)),
        reference_samples=_positive_int("reference_samples", values["reference_samples"]),
        perturbation=_positive_float("perturbation", values.get("perturbation", 1e-6)),
        normalize=bool(values.get("normalize", False)),
        mc_chunk=_positive_int("mc_chunk", values["mc_chunk"]),
        schedule_start=start,
        schedule_cap=cap,
    )
