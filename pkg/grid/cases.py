"""
그리드 케이스 문서 로더

케이스 문서(JSON, UTF-8)를 읽어 검증된 GridCase 로 변환합니다.
버스는 id 오름차순으로 정렬되며, 그 순서가 모든 행렬의 인덱스가 됩니다.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

BUS_KINDS = ("slack", "generator", "load")

# 무한/누락된 발전 한계를 대신하는 값 (per-unit)
LIMIT_SENTINEL = 1e6

# slack 평균 주입량과 나머지 합의 허용 오차
_BALANCE_TOL = 1e-6


class CaseError(ValueError):
    """케이스 문서 오류의 기본 클래스"""


class CaseSchemaError(CaseError):
    """필수 필드 누락, 타입 오류, 범위 위반"""


class DuplicateBusError(CaseError):
    """같은 id 의 버스가 두 번 이상 등장"""


class SlackBusError(CaseError):
    """slack 버스가 없거나 둘 이상"""


class SusceptanceError(CaseError):
    """0 이하의 선로 서셉턴스"""


class DisconnectedGridError(CaseError):
    """버스 그래프가 연결되어 있지 않음"""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p_mean: float
    # None 은 한계 없음 (센티넬 행으로 대체)
    p_min: Optional[float] = None
    p_max: Optional[float] = None

    @property
    def lower(self) -> float:
        return -LIMIT_SENTINEL if self.p_min is None else self.p_min

    @property
    def upper(self) -> float:
        return LIMIT_SENTINEL if self.p_max is None else self.p_max


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    theta_max: float


@dataclass(frozen=True)
class GridCase:
    """DC 조류 계산용 물리 네트워크 설명"""

    name: str
    base_mva: float
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    slack_id: int
    sigma_scale: Optional[float] = None
    sigma_std: Dict[int, float] = field(default_factory=dict)
    provenance: str = ""

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def m(self) -> int:
        return len(self.lines)

    @property
    def bus_ids(self) -> Tuple[int, ...]:
        return tuple(bus.id for bus in self.buses)

    @property
    def slack_index(self) -> int:
        return self.bus_ids.index(self.slack_id)

    def index_of(self, bus_id: int) -> int:
        return self.bus_ids.index(bus_id)

    @property
    def mean_injection(self) -> np.ndarray:
        """확률 벡터의 평균 (slack 좌표는 0, 실제 slack 주입은 Cp 로 복원)"""
        mean = np.array([bus.p_mean for bus in self.buses])
        mean[self.slack_index] = 0.0
        return mean


def with_theta_max(case: GridCase, theta_max: float) -> GridCase:
    """모든 선로의 위상각 차 한계를 theta_max 로 일괄 교체"""
    if not (theta_max > 0 and math.isfinite(theta_max)):
        raise CaseSchemaError(f"theta_max 는 양의 유한값이어야 합니다: {theta_max}")
    lines = tuple(replace(line, theta_max=float(theta_max)) for line in case.lines)
    return replace(case, lines=lines)


def load_case(source: Union[str, Path, Mapping[str, Any]]) -> GridCase:
    """
    케이스 문서를 읽어 GridCase 로 변환

    Args:
        source: JSON 파일 경로 또는 이미 파싱된 문서(dict)

    Returns:
        GridCase: 모든 불변조건을 만족하는 케이스

    Raises:
        CaseError: 스키마 위반, 중복 버스, slack 오류, 서셉턴스 오류, 비연결 그래프
    """
    if isinstance(source, Mapping):
        document = source
    else:
        path = Path(source)
        try:
            with path.open(encoding="utf-8") as fh:
                document = json.load(fh)
        except FileNotFoundError as e:
            raise CaseSchemaError(f"케이스 파일이 없습니다: {path}") from e
        except json.JSONDecodeError as e:
            raise CaseSchemaError(f"케이스 파일 JSON 파싱 실패 ({path}): {e}") from e

    if not isinstance(document, Mapping):
        raise CaseSchemaError("케이스 문서의 최상위는 객체여야 합니다")

    name = str(document.get("name", "unnamed"))
    base_mva = _number(document.get("base_mva", 100.0), "base_mva")
    buses = _parse_buses(document.get("buses"))
    lines = _parse_lines(document.get("lines"), {bus.id for bus in buses})
    slack_id = _find_slack(buses)
    sigma_scale, sigma_std = _parse_sigma(document.get("sigma"), {b.id for b in buses})

    _check_connected(buses, lines)
    _check_balance(name, buses, slack_id)

    case = GridCase(
        name=name,
        base_mva=base_mva,
        buses=tuple(sorted(buses, key=lambda b: b.id)),
        lines=tuple(lines),
        slack_id=slack_id,
        sigma_scale=sigma_scale,
        sigma_std=sigma_std,
        provenance=str(document.get("provenance", "")),
    )
    logger.info(f"케이스 로드 완료 - {case.name}: 버스 {case.n}개, 선로 {case.m}개")
    return case


def _number(value: Any, where: str, *, allow_none: bool = False) -> Optional[float]:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseSchemaError(f"{where}: 숫자가 필요합니다 (받은 값: {value!r})")
    number = float(value)
    if math.isinf(number) and allow_none:
        return None
    if not math.isfinite(number):
        raise CaseSchemaError(f"{where}: 유한한 숫자가 필요합니다 (받은 값: {value!r})")
    return number


def _parse_buses(raw: Any) -> List[Bus]:
    if not isinstance(raw, list) or len(raw) < 2:
        raise CaseSchemaError("buses: 버스가 2개 이상인 목록이 필요합니다")

    buses: List[Bus] = []
    seen = set()
    for position, item in enumerate(raw):
        where = f"buses[{position}]"
        if not isinstance(item, Mapping):
            raise CaseSchemaError(f"{where}: 객체가 필요합니다")
        bus_id = item.get("id")
        if isinstance(bus_id, bool) or not isinstance(bus_id, int):
            raise CaseSchemaError(f"{where}.id: 정수가 필요합니다 (받은 값: {bus_id!r})")
        if bus_id in seen:
            raise DuplicateBusError(f"버스 id {bus_id} 가 중복되었습니다 ({where})")
        seen.add(bus_id)

        kind = item.get("kind")
        if kind not in BUS_KINDS:
            raise CaseSchemaError(
                f"버스 {bus_id}: kind 는 {BUS_KINDS} 중 하나여야 합니다 (받은 값: {kind!r})"
            )

        p_mean = _number(item.get("p_mean", 0.0), f"버스 {bus_id}.p_mean")
        p_min = _number(item.get("p_min"), f"버스 {bus_id}.p_min", allow_none=True)
        p_max = _number(item.get("p_max"), f"버스 {bus_id}.p_max", allow_none=True)
        bus = Bus(id=bus_id, kind=kind, p_mean=p_mean, p_min=p_min, p_max=p_max)
        # slack 의 한계는 균형 주입량에 대한 것이라 p_mean 과 비교하지 않음
        if kind != "slack" and not (bus.lower <= p_mean <= bus.upper):
            raise CaseSchemaError(
                f"버스 {bus_id}: p_min <= p_mean <= p_max 위반 "
                f"({bus.lower} <= {p_mean} <= {bus.upper})"
            )
        if bus.lower > bus.upper:
            raise CaseSchemaError(f"버스 {bus_id}: p_min 이 p_max 보다 큽니다")
        buses.append(bus)
    return buses


def _parse_lines(raw: Any, bus_ids: set) -> List[Line]:
    if not isinstance(raw, list) or len(raw) < 1:
        raise CaseSchemaError("lines: 선로가 1개 이상인 목록이 필요합니다")

    lines: List[Line] = []
    for position, item in enumerate(raw):
        where = f"lines[{position}]"
        if not isinstance(item, Mapping):
            raise CaseSchemaError(f"{where}: 객체가 필요합니다")
        ends = (item.get("from"), item.get("to"))
        for end in ends:
            if isinstance(end, bool) or not isinstance(end, int):
                raise CaseSchemaError(f"{where}: from/to 는 정수 버스 id 여야 합니다")
            if end not in bus_ids:
                raise CaseSchemaError(f"{where}: 존재하지 않는 버스 {end} 를 참조합니다")
        if ends[0] == ends[1]:
            raise CaseSchemaError(f"{where}: 자기 루프 선로 ({ends[0]}-{ends[1]})")

        susceptance = _number(item.get("susceptance"), f"{where}.susceptance")
        if susceptance <= 0:
            raise SusceptanceError(
                f"선로 {ends[0]}-{ends[1]} ({where}): 서셉턴스는 양수여야 합니다 "
                f"(받은 값: {susceptance})"
            )
        theta_max = _number(item.get("theta_max"), f"{where}.theta_max")
        if theta_max <= 0:
            raise CaseSchemaError(
                f"선로 {ends[0]}-{ends[1]} ({where}): theta_max 는 양수여야 합니다"
            )
        lines.append(Line(ends[0], ends[1], susceptance, theta_max))
    return lines


def _find_slack(buses: List[Bus]) -> int:
    slack = [bus.id for bus in buses if bus.kind == "slack"]
    if not slack:
        raise SlackBusError("slack 버스가 없습니다 (no slack bus)")
    if len(slack) > 1:
        raise SlackBusError(f"slack 버스가 여러 개입니다: {slack}")
    return slack[0]


def _parse_sigma(raw: Any, bus_ids: set) -> Tuple[Optional[float], Dict[int, float]]:
    if raw is None:
        return None, {}
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raw = {"scale": raw}
    if not isinstance(raw, Mapping):
        raise CaseSchemaError("sigma: 객체 또는 숫자가 필요합니다")

    scale = raw.get("scale")
    if scale is not None:
        scale = _number(scale, "sigma.scale")
        if scale < 0:
            raise CaseSchemaError("sigma.scale 은 0 이상이어야 합니다")

    std: Dict[int, float] = {}
    for key, value in (raw.get("std") or {}).items():
        try:
            bus_id = int(key)
        except (TypeError, ValueError) as e:
            raise CaseSchemaError(f"sigma.std: 버스 id 가 아닙니다: {key!r}") from e
        if bus_id not in bus_ids:
            raise CaseSchemaError(f"sigma.std: 존재하지 않는 버스 {bus_id}")
        value = _number(value, f"sigma.std[{bus_id}]")
        if value < 0:
            raise CaseSchemaError(f"sigma.std[{bus_id}] 는 0 이상이어야 합니다")
        std[bus_id] = value
    return scale, std


def _check_connected(buses: List[Bus], lines: List[Line]) -> None:
    graph = nx.MultiGraph()  # 병렬 선로 허용
    graph.add_nodes_from(bus.id for bus in buses)
    graph.add_edges_from((line.from_bus, line.to_bus) for line in lines)
    if not nx.is_connected(graph):
        components = sorted(
            (sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0]
        )
        raise DisconnectedGridError(
            f"그리드가 연결되어 있지 않습니다 - 연결 요소 {len(components)}개: "
            f"{components}"
        )


def _check_balance(name: str, buses: List[Bus], slack_id: int) -> None:
    slack_mean = next(bus.p_mean for bus in buses if bus.id == slack_id)
    balance = -sum(bus.p_mean for bus in buses if bus.id != slack_id)
    if abs(slack_mean - balance) > _BALANCE_TOL:
        logger.warning(
            f"{name}: slack 평균 주입량 {slack_mean:.6g} 이 균형값 {balance:.6g} 과 "
            f"다릅니다 - 균형값을 기준으로 계산합니다"
        )
