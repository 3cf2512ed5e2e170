from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import sparse
from scipy.sparse.csgraph import breadth_first_order
from scipy.spatial.distance import cdist, pdist

from wrsn_charging.errors import ConfigError, InfeasibleScenarioError, ScenarioParseError, ScenarioValidationError
from wrsn_charging.log import logger

BS = -1
"""Routing id of the base station."""

Point = tuple[float, float]


class EnergyParams(BaseModel):
    """Physical constants of the network; defaults are the base energy-model values."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    eps_elec: float = Field(50e-9, gt=0, description="J/bit, transceiver electronics")
    eps_fs: float = Field(10e-12, gt=0, description="J/bit/m^2, free-space amplifier")
    eps_mp: float = Field(1.3e-15, gt=0, description="J/bit/m^4, multi-path amplifier")
    d0: float = Field(gt=0, description="m, free-space / multi-path crossover")
    b_packet: float = Field(4000, gt=0, description="bits per generated packet")
    packet_period: float = Field(1.0, gt=0, description="s between two packets of one sensor")
    r_c: float = Field(80.0, gt=0)
    r_s: float = Field(40.0, gt=0)
    e_th: float = Field(540.0, gt=0)
    e_max: float = Field(10800.0, gt=0)
    E_max: float = Field(108000.0, gt=0)
    r_charge: float = Field(27.0, gt=0)
    alpha: float = Field(4500.0, gt=0)
    beta: float = Field(30.0, gt=0)
    P_M: float = Field(1.0, gt=0, description="J/m travelled by a charger")
    V: float = Field(5.0, gt=0, description="m/s charger speed")
    t_sm: float = Field(604800.0, gt=0, description="s, simulation cap")
    p_min: float = Field(1e-6, gt=0, description="J/s floor of the consumption estimate")
    e_floor: float = Field(1.0, gt=0, description="J floor of e - e_th in ratio denominators")

    @model_validator(mode="before")
    @classmethod
    def _fill_crossover(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("d0") is None:
            eps_fs = data.get("eps_fs", cls.model_fields["eps_fs"].default)
            eps_mp = data.get("eps_mp", cls.model_fields["eps_mp"].default)
            data = {**data, "d0": math.sqrt(eps_fs / eps_mp)}
        return data

    @model_validator(mode="after")
    def _check_thresholds(self) -> EnergyParams:
        if self.e_th >= self.e_max:
            raise ValueError(f"e_th ({self.e_th}) must be below e_max ({self.e_max})")
        return self

    @property
    def standard_charge_time(self) -> float:
        """Time to refill ``e_max - e_th`` at the zero-distance charging rate."""
        return (self.e_max - self.e_th) / (self.alpha / self.beta**2)


class ScenarioFile(BaseModel):
    """On-disk scenario format."""

    model_config = ConfigDict(extra="forbid")

    base_station: Point
    sensors: list[Point] = Field(min_length=1)
    targets: list[Point] = Field(min_length=1)
    params: EnergyParams = Field(default_factory=EnergyParams)

    @field_validator("base_station")
    @classmethod
    def _finite_point(cls, v: Point) -> Point:
        if not all(math.isfinite(c) for c in v):
            raise ValueError(f"non-finite coordinate {v}")
        return v

    @field_validator("sensors", "targets")
    @classmethod
    def _finite_points(cls, v: list[Point]) -> list[Point]:
        for i, p in enumerate(v):
            if not all(math.isfinite(c) for c in p):
                raise ValueError(f"non-finite coordinate at index {i}: {p}")
        return v


@dataclass(frozen=True, eq=False)
class ScenarioInstance:
    """Immutable network geometry.

    Graph node ids used by ``adjacency`` are ``0`` for the base station and
    ``j + 1`` for sensor ``j``.
    """

    base_station: np.ndarray
    sensors: np.ndarray
    targets: np.ndarray
    params: EnergyParams
    bounds: tuple[float, float, float, float]
    d_avg: float
    monitors: tuple[tuple[int, ...], ...]
    """MS_i: sensors within r_s of target i."""
    monitored_targets: tuple[frozenset[int], ...]
    """MT_j: targets within r_s of sensor j."""
    dist_to_bs: np.ndarray
    adjacency: sparse.csr_matrix = field(repr=False)

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    def neighbors(self, node: int) -> np.ndarray:
        row = self.adjacency.indptr
        return self.adjacency.indices[row[node] : row[node + 1]]

    def to_file(self) -> ScenarioFile:
        return ScenarioFile(
            base_station=tuple(self.base_station.tolist()),
            sensors=[tuple(p) for p in self.sensors.tolist()],
            targets=[tuple(p) for p in self.targets.tolist()],
            params=self.params,
        )


@dataclass(frozen=True)
class RoutingTable:
    next_hop: dict[int, int]
    """Sensor -> next sensor, or ``BS``. Dead-end sensors have no entry."""
    hop_load: dict[int, int]
    dead_ends: frozenset[int]

    def chain(self, sensor: int) -> list[int]:
        """Hops a packet of ``sensor`` visits after leaving it."""
        hops = []
        node = sensor
        while node in self.next_hop:
            node = self.next_hop[node]
            hops.append(node)
            if node == BS:
                break
        return hops


def _bounds(sensors: np.ndarray, pad: float) -> tuple[float, float, float, float]:
    lo = sensors.min(axis=0)
    hi = sensors.max(axis=0)
    out = []
    for axis in range(2):
        a, b = float(lo[axis]), float(hi[axis])
        if b - a <= 1e-9:
            logger.warning(f"Degenerate sensor extent on axis {axis}, padding bounds by {pad} m")
            a, b = a - pad, b + pad
        out.extend((a, b))
    return tuple(out)


def _adjacency(base_station: np.ndarray, sensors: np.ndarray, r_c: float) -> sparse.csr_matrix:
    nodes = np.vstack([base_station[None, :], sensors])
    within = cdist(nodes, nodes) <= r_c
    np.fill_diagonal(within, False)
    return sparse.csr_matrix(within)


def reachable_from_bs(adjacency: sparse.csr_matrix, alive: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask over graph nodes (BS first) reachable from the BS through alive sensors."""
    n_nodes = adjacency.shape[0]
    if alive is None:
        graph = adjacency
    else:
        keep = np.concatenate([[True], alive]).astype(float)
        mask = sparse.diags(keep)
        graph = mask @ adjacency @ mask
    order = breadth_first_order(graph, 0, directed=False, return_predecessors=False)
    reached = np.zeros(n_nodes, dtype=bool)
    reached[order] = True
    return reached


def build_instance(scenario: ScenarioFile, *, validate: bool = True) -> ScenarioInstance:
    params = scenario.params
    base_station = np.asarray(scenario.base_station, dtype=float)
    sensors = np.asarray(scenario.sensors, dtype=float).reshape(-1, 2)
    targets = np.asarray(scenario.targets, dtype=float).reshape(-1, 2)

    cover = cdist(targets, sensors) <= params.r_s
    monitors = tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in cover)
    monitored = tuple(frozenset(int(i) for i in np.flatnonzero(col)) for col in cover.T)
    d_avg = float(pdist(sensors).mean()) if len(sensors) > 1 else params.r_c

    instance = ScenarioInstance(
        base_station=base_station,
        sensors=sensors,
        targets=targets,
        params=params,
        bounds=_bounds(sensors, params.r_charge),
        d_avg=d_avg,
        monitors=monitors,
        monitored_targets=monitored,
        dist_to_bs=np.linalg.norm(sensors - base_station, axis=1),
        adjacency=_adjacency(base_station, sensors, params.r_c),
    )
    if validate:
        validate_instance(instance)
    return instance


def validate_instance(instance: ScenarioInstance) -> None:
    for i, ms in enumerate(instance.monitors):
        if not ms:
            raise ScenarioValidationError(f"target {i} uncovered")
    reached = reachable_from_bs(instance.adjacency)
    for j, mt in enumerate(instance.monitored_targets):
        if mt and not reached[j + 1]:
            raise ScenarioValidationError(f"sensor {j} disconnected from base station")


def load_instance(path: Path | str) -> ScenarioInstance:
    path = Path(path)
    try:
        scenario = ScenarioFile.model_validate_json(path.read_text(encoding="utf-8"))
    except (pydantic.ValidationError, OSError, UnicodeDecodeError) as e:
        raise ScenarioParseError(f"cannot parse scenario {path}: {e}") from e
    instance = build_instance(scenario)
    logger.debug(f"Loaded {path}: {instance.n_sensors} sensors, {instance.n_targets} targets")
    return instance


def dump_instance(instance: ScenarioInstance) -> str:
    return json.dumps(instance.to_file().model_dump(mode="json"), indent=2) + "\n"


def save_instance(instance: ScenarioInstance, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_instance(instance), encoding="utf-8")
    return path


def generate_instance(
    seed: int,
    area: tuple[float, float],
    n_targets: int,
    n_sensors: int,
    params: EnergyParams | None = None,
    repair_budget: int | None = None,
) -> ScenarioInstance:
    """Random scenario with greedy repair.

    Sensors are scattered uniformly, then repair sensors are inserted on the
    straight line toward the base station until every target is covered and
    every monitoring sensor reaches the base station. At most
    ``repair_budget`` (default ``4 * n_sensors``) sensors may be added.
    """
    if n_targets < 1 or n_sensors < 1:
        raise ConfigError("n_targets and n_sensors must be >= 1")
    width, height = area
    if width <= 0 or height <= 0:
        raise ConfigError(f"area must be positive, got {area}")
    params = params or EnergyParams()
    budget = 4 * n_sensors if repair_budget is None else repair_budget

    rng = np.random.default_rng(seed)
    bs = np.array([width / 2, height / 2])
    targets = rng.uniform((0.0, 0.0), (width, height), size=(n_targets, 2))
    sensors = list(rng.uniform((0.0, 0.0), (width, height), size=(n_sensors, 2)))
    added = 0

    def _add(p: np.ndarray) -> None:
        nonlocal added
        added += 1
        if added > budget:
            raise InfeasibleScenarioError(
                "repair budget exhausted", n_targets=n_targets, n_sensors=n_sensors, added=added - 1
            )
        sensors.append(p)

    def _toward_bs(p: np.ndarray, step: float) -> np.ndarray:
        gap = bs - p
        dist = float(np.linalg.norm(gap))
        if dist <= step:
            return bs.copy()
        return p + gap / dist * step

    for t in targets:
        if np.linalg.norm(np.asarray(sensors) - t, axis=1).min() > params.r_s:
            _add(_toward_bs(t, min(params.r_s / 2, float(np.linalg.norm(bs - t)) / 2)))

    step = 0.9 * params.r_c
    while True:
        arr = np.asarray(sensors)
        adjacency = _adjacency(bs, arr, params.r_c)
        reached = reachable_from_bs(adjacency)
        covering = (cdist(targets, arr) <= params.r_s).any(axis=0)
        pending = np.flatnonzero(covering & ~reached[1:])
        if not len(pending):
            break
        anchors = np.vstack([bs[None, :], arr[reached[1:]]])
        p = arr[pending[0]]
        while np.linalg.norm(anchors - p, axis=1).min() > params.r_c:
            p = _toward_bs(p, step)
            _add(p)

    logger.info(f"Generated scenario seed={seed}: {len(sensors)} sensors ({added} repair), {n_targets} targets")
    scenario = ScenarioFile(
        base_station=tuple(bs.tolist()),
        sensors=[tuple(p) for p in np.asarray(sensors).tolist()],
        targets=[tuple(p) for p in targets.tolist()],
        params=params,
    )
    return build_instance(scenario)


def build_routing(instance: ScenarioInstance) -> RoutingTable:
    """Greedy geographic routing: forward to the in-range node nearest the BS."""
    next_hop: dict[int, int] = {}
    dead_ends = set()
    for j in range(instance.n_sensors):
        best, best_dist = None, instance.dist_to_bs[j]
        for node in instance.neighbors(j + 1):
            k = int(node) - 1
            d = 0.0 if k == BS else float(instance.dist_to_bs[k])
            # strictly nearer wins; equal distance keeps the lower index seen first
            if d < best_dist or (best is not None and d == best_dist and k < best):
                best, best_dist = k, d
        if best is None:
            dead_ends.add(j)
        else:
            next_hop[j] = best

    hop_load = dict.fromkeys(range(instance.n_sensors), 0)
    table = RoutingTable(next_hop=next_hop, hop_load=hop_load, dead_ends=frozenset(dead_ends))
    for j in range(instance.n_sensors):
        for hop in table.chain(j):
            if hop != BS:
                hop_load[hop] += 1
    if dead_ends:
        logger.warning(f"Routing dead-ends: {sorted(dead_ends)}")
    return table
