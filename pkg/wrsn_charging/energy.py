"""Fixed-step simulation of sensor drain, charger kinematics and wireless charging."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict

from wrsn_charging.errors import ChargerEnergyUnderflow, InvariantViolation
from wrsn_charging.log import logger
from wrsn_charging.scenario import BS, EnergyParams, RoutingTable, ScenarioInstance, build_routing, reachable_from_bs

WINDOW_SPAN = 100.0
"""Seconds covered by the consumption-rate estimate."""


def receive_cost(b: float, params: EnergyParams) -> float:
    return b * params.eps_elec


def transmit_cost(b: float, d: float | np.ndarray, params: EnergyParams) -> float | np.ndarray:
    d = np.asarray(d, dtype=float)
    amp = np.where(d < params.d0, b * params.eps_fs * d**2, b * params.eps_mp * d**4)
    cost = b * params.eps_elec + amp
    return float(cost) if cost.ndim == 0 else cost


def charge_rate(d: float | np.ndarray, params: EnergyParams) -> float | np.ndarray:
    """Power received at distance ``d`` from a charging charger (J/s)."""
    d = np.asarray(d, dtype=float)
    rate = np.where(d <= params.r_charge, params.alpha / (d + params.beta) ** 2, 0.0)
    return float(rate) if rate.ndim == 0 else rate


class ChargerMode(str, enum.Enum):
    IDLE = "idle-awaiting-action"
    MOVING = "moving-to-target"
    CHARGING = "charging"
    RETURNING = "returning-to-BS"


class LegKind(str, enum.Enum):
    RETURN = "return"
    RECHARGE = "recharge"
    MOVE = "move"
    CHARGE = "charge"


@dataclass
class Leg:
    """One low-level piece of a macro action."""

    kind: LegKind
    target: np.ndarray | None = None
    duration: float = 0.0
    rates: np.ndarray | None = field(default=None, repr=False)


class EventKind(str, enum.Enum):
    SENSOR_DIED = "sensor-died"
    CHARGER_ARRIVED = "charger-arrived"
    CHARGING_FINISHED = "charging-finished"
    TARGET_DISCONNECTED = "target-disconnected"
    NETWORK_DIED = "network-died"


class SimEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: float
    kind: EventKind
    entity_id: int
    payload: dict[str, Any] = {}


@dataclass
class ConsumptionWindow:
    """Running sum of energy consumed over the trailing ``span`` seconds."""

    span: float = WINDOW_SPAN
    entries: deque[tuple[float, float]] = field(default_factory=deque)
    total: float = 0.0

    def record(self, t: float, amount: float) -> None:
        if amount > 0:
            self.entries.append((t, amount))
            self.total += amount
        self._prune(t)

    def _prune(self, t: float) -> None:
        while self.entries and self.entries[0][0] <= t - self.span:
            _, amount = self.entries.popleft()
            self.total -= amount
        if not self.entries:
            self.total = 0.0

    def rate(self, t: float, p_min: float) -> float:
        self._prune(t)
        if t <= 0 or self.total <= 0:
            return p_min
        return max(self.total / min(t, self.span), p_min)


@dataclass
class SensorState:
    id: int
    position: np.ndarray
    energy: float
    alive: bool
    window: ConsumptionWindow
    p: float
    monitored_targets: frozenset[int]


def consumption_rate(sensor: SensorState, t: float, p_min: float = 1e-6) -> float:
    return sensor.window.rate(t, p_min)


@dataclass
class ChargerState:
    id: int
    position: np.ndarray
    energy: float
    schedule: deque[Leg] = field(default_factory=deque)

    @property
    def leg(self) -> Leg | None:
        return self.schedule[0] if self.schedule else None

    @property
    def mode(self) -> ChargerMode:
        leg = self.leg
        if leg is None:
            return ChargerMode.IDLE
        if leg.kind == LegKind.CHARGE:
            return ChargerMode.CHARGING
        if leg.kind in (LegKind.RETURN, LegKind.RECHARGE):
            return ChargerMode.RETURNING
        return ChargerMode.MOVING

    @property
    def destination(self) -> np.ndarray | None:
        for leg in self.schedule:
            if leg.target is not None:
                return leg.target
        return None

    @property
    def remaining_charge(self) -> float:
        leg = self.leg
        return leg.duration if leg is not None and leg.kind == LegKind.CHARGE else 0.0


@dataclass
class EnergyLedger:
    """Per-step energy flows, kept for conservation checks."""

    traffic: np.ndarray
    delivered: np.ndarray
    charge_debit: np.ndarray
    move_debit: np.ndarray


@dataclass(eq=False)
class NetworkState:
    instance: ScenarioInstance
    routing: RoutingTable
    chargers: list[ChargerState]
    energy: np.ndarray
    alive: np.ndarray
    p: np.ndarray
    windows: list[ConsumptionWindow]
    mnt: np.ndarray
    rng: np.random.Generator
    clock: float = 0.0
    dead: bool = False
    ledger: EnergyLedger | None = None
    _traffic_cache: tuple[bytes, np.ndarray] | None = field(default=None, repr=False)

    @classmethod
    def create(
        cls,
        instance: ScenarioInstance,
        *,
        n_chargers: int = 0,
        seed: int = 0,
        routing: RoutingTable | None = None,
        energy: np.ndarray | None = None,
    ) -> NetworkState:
        params = instance.params
        n = instance.n_sensors
        state = cls(
            instance=instance,
            routing=routing or build_routing(instance),
            chargers=[
                ChargerState(id=k, position=instance.base_station.copy(), energy=params.E_max)
                for k in range(n_chargers)
            ],
            energy=np.full(n, params.e_max) if energy is None else np.asarray(energy, dtype=float).copy(),
            alive=np.ones(n, dtype=bool),
            p=np.full(n, params.p_min),
            windows=[ConsumptionWindow() for _ in range(n)],
            mnt=np.ones(instance.n_targets, dtype=np.int8),
            rng=np.random.default_rng(seed),
        )
        state.alive &= state.energy >= params.e_th
        refresh_connectivity(state)
        return state

    @property
    def params(self) -> EnergyParams:
        return self.instance.params

    def sensor(self, j: int) -> SensorState:
        return SensorState(
            id=j,
            position=self.instance.sensors[j],
            energy=float(self.energy[j]),
            alive=bool(self.alive[j]),
            window=self.windows[j],
            p=float(self.p[j]),
            monitored_targets=self.instance.monitored_targets[j],
        )

    def _round_debits(self) -> np.ndarray:
        """Energy each sensor spends when every alive sensor emits one packet."""
        key = self.alive.tobytes()
        if self._traffic_cache is not None and self._traffic_cache[0] == key:
            return self._traffic_cache[1]

        params = self.params
        sensors = self.instance.sensors
        b = params.b_packet
        rx = receive_cost(b, params)
        debit = np.zeros(self.instance.n_sensors)
        for j in np.flatnonzero(self.alive):
            sender = int(j)
            for hop in self.routing.chain(sender):
                if hop == BS:
                    debit[sender] += transmit_cost(b, self.instance.dist_to_bs[sender], params)
                    break
                debit[sender] += transmit_cost(b, float(np.linalg.norm(sensors[hop] - sensors[sender])), params)
                if not self.alive[hop]:
                    break
                debit[hop] += rx
                sender = hop
        self._traffic_cache = (key, debit)
        return debit

    def _packets_fired(self, dt: float) -> int:
        period = self.params.packet_period
        return math.floor((self.clock + dt) / period + 1e-9) - math.floor(self.clock / period + 1e-9)

    def _skip_instant_legs(self, charger: ChargerState, t: float, events: list[SimEvent]) -> None:
        while charger.schedule:
            leg = charger.schedule[0]
            if leg.kind == LegKind.RECHARGE:
                charger.energy = self.params.E_max
                charger.schedule.popleft()
            elif leg.kind in (LegKind.MOVE, LegKind.RETURN) and np.array_equal(charger.position, leg.target):
                charger.schedule.popleft()
                events.append(
                    SimEvent(t=t, kind=EventKind.CHARGER_ARRIVED, entity_id=charger.id, payload={"leg": leg.kind.value})
                )
            elif leg.kind == LegKind.CHARGE and leg.duration <= 0:
                charger.schedule.popleft()
                events.append(SimEvent(t=t, kind=EventKind.CHARGING_FINISHED, entity_id=charger.id))
            else:
                return

    def step(self, dt: float) -> list[SimEvent]:
        """Advance the network by ``dt`` seconds.

        Within a step: traffic, charger movement, charging, deaths, then
        bookkeeping (consumption windows, connectivity, clock).
        """
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if self.dead:
            raise InvariantViolation("step() called on a dead network")

        params = self.params
        n, m = self.instance.n_sensors, len(self.chargers)
        t_end = self.clock + dt
        events: list[SimEvent] = []
        alive_before = self.alive.copy()

        fired = self._packets_fired(dt)
        traffic = self._round_debits() * fired if fired else np.zeros(n)
        consumed = np.minimum(traffic, self.energy)
        self.energy -= consumed

        move_debit = np.zeros(m)
        moved = set()
        for charger in self.chargers:
            self._skip_instant_legs(charger, t_end, events)
            leg = charger.leg
            if leg is None or leg.kind not in (LegKind.MOVE, LegKind.RETURN):
                continue
            gap = leg.target - charger.position
            remaining = float(np.linalg.norm(gap))
            travel = min(params.V * dt, remaining)
            if travel >= remaining:
                charger.position = leg.target.copy()
            else:
                charger.position = charger.position + gap / remaining * travel
            move_debit[charger.id] = params.P_M * travel
            charger.energy -= move_debit[charger.id]
            moved.add(charger.id)
            if travel >= remaining:
                charger.schedule.popleft()
                events.append(
                    SimEvent(
                        t=t_end,
                        kind=EventKind.CHARGER_ARRIVED,
                        entity_id=charger.id,
                        payload={"leg": leg.kind.value, "position": charger.position.tolist()},
                    )
                )
                self._skip_instant_legs(charger, t_end, events)

        delivered = np.zeros(n)
        charge_debit = np.zeros(m)
        for charger in self.chargers:
            leg = charger.leg
            if charger.id in moved or leg is None or leg.kind != LegKind.CHARGE:
                continue
            if leg.rates is None:
                leg.rates = charge_rate(np.linalg.norm(self.instance.sensors - charger.position, axis=1), params)
            t_eff = min(dt, leg.duration)
            give = np.where(alive_before, leg.rates * t_eff, 0.0)
            give = np.minimum(give, np.maximum(params.e_max - self.energy, 0.0))
            self.energy += give
            delivered += give
            charge_debit[charger.id] = give.sum()
            charger.energy -= charge_debit[charger.id]
            leg.duration -= t_eff
            if leg.duration <= 1e-12:
                charger.schedule.popleft()
                events.append(SimEvent(t=t_end, kind=EventKind.CHARGING_FINISHED, entity_id=charger.id))

        for charger in self.chargers:
            if charger.energy < -1e-9:
                raise ChargerEnergyUnderflow(
                    f"charger {charger.id} energy {charger.energy:.6f} J at t={t_end} "
                    f"(position={charger.position.tolist()}, mode={charger.mode.value})"
                )
            charger.energy = max(charger.energy, 0.0)

        newly_dead = self.alive & (self.energy < params.e_th)
        self.alive &= ~newly_dead
        for j in np.flatnonzero(newly_dead):
            events.append(
                SimEvent(t=t_end, kind=EventKind.SENSOR_DIED, entity_id=int(j), payload={"energy": float(self.energy[j])})
            )
        if np.any(self.alive & ~alive_before):
            raise InvariantViolation(f"sensor revived at t={t_end}")

        self.clock = t_end
        for j in range(n):
            self.windows[j].record(t_end, float(consumed[j]))
            self.p[j] = self.windows[j].rate(t_end, params.p_min)

        if newly_dead.any():
            before = self.mnt.copy()
            refresh_connectivity(self)
            for i in np.flatnonzero((before == 1) & (self.mnt == 0)):
                events.append(SimEvent(t=t_end, kind=EventKind.TARGET_DISCONNECTED, entity_id=int(i)))
            if self.dead:
                logger.debug(f"Network died at t={t_end}")
                events.append(SimEvent(t=t_end, kind=EventKind.NETWORK_DIED, entity_id=-1))

        self.ledger = EnergyLedger(traffic=consumed, delivered=delivered, charge_debit=charge_debit, move_debit=move_debit)
        return events


def refresh_connectivity(state: NetworkState) -> np.ndarray:
    """Recompute MNT: a target is monitored iff an alive monitor reaches the BS."""
    reached = reachable_from_bs(state.instance.adjacency, state.alive)
    mnt = np.zeros(state.instance.n_targets, dtype=np.int8)
    for i, monitors in enumerate(state.instance.monitors):
        if any(state.alive[j] and reached[j + 1] for j in monitors):
            mnt[i] = 1
    state.mnt = mnt
    state.dead = bool((mnt == 0).any())
    return mnt
