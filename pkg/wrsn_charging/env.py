"""Macro-action environment: asynchronous per-charger decisions over the fixed-step simulator."""

from __future__ import annotations

import enum
import math
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from wrsn_charging.energy import ChargerState, Leg, LegKind, NetworkState, SimEvent, charge_rate
from wrsn_charging.errors import DegenerateScenarioError
from wrsn_charging.lifetime import estimate_remaining_lifetime
from wrsn_charging.log import logger
from wrsn_charging.observation import F4Anchor, Observation, ObservationGrid, ObservationMask, render
from wrsn_charging.scenario import RoutingTable, ScenarioInstance, build_routing


class Ablation(str, enum.Enum):
    FULL = "FULL"
    NO_1 = "NO_1"
    NO_2_3_4 = "NO_2_3_4"
    NO_EX = "NO_EX"
    NO_GE = "NO_GE"
    NO_PM = "NO_PM"

    @property
    def mask(self) -> ObservationMask:
        if self is Ablation.NO_1:
            return ObservationMask.NO_1
        if self is Ablation.NO_2_3_4:
            return ObservationMask.NO_2_3_4
        return ObservationMask.FULL

    @property
    def uses_general(self) -> bool:
        return self is not Ablation.NO_GE

    @property
    def uses_exclusive(self) -> bool:
        return self is not Ablation.NO_EX

    @property
    def direct_action(self) -> bool:
        """Actor emits (a, b, c) itself instead of a probability map."""
        return self is Ablation.NO_PM


@dataclass(frozen=True)
class MacroAction:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise ValueError(f"non-finite macro action {self}")
        if self.c < 0:
            raise ValueError(f"charging duration must be >= 0, got {self.c}")

    @property
    def point(self) -> np.ndarray:
        return np.array([self.a, self.b], dtype=float)


class EnvConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(1.0, gt=0, description="s per simulator step")
    n_chargers: int = Field(3, ge=1)
    grid_size: int = Field(100, ge=2, description="T, cells per observation axis")
    kernel_width: float | None = Field(None, gt=0, description="m; None means r_c")
    f4_anchor: F4Anchor = F4Anchor.DESTINATION
    ablation: Ablation = Ablation.FULL
    r_scale: float = Field(1000.0, gt=0)
    r_scale_ex: float = Field(1.0, gt=0)
    reward_sign_as_printed: bool = False
    t_max: float | None = Field(None, gt=0, description="s; None means t_sm")
    warmup_steps: int = Field(1, ge=0, description="steps simulated before the first decision")


@dataclass
class TransitionFrame:
    agent_id: int
    o_start: Observation
    action: MacroAction
    latent: np.ndarray | None
    log_prob: float
    o_end: Observation
    t_start: float
    t_end: float
    general: float
    exclusive: float
    reward: float
    terminal: bool = False
    """Closed by network death; the bootstrap value of ``o_end`` is zero."""
    advantage: float = 0.0

    def to_record(self, *, include_latent: bool = False) -> dict[str, Any]:
        record = {
            "agent_id": self.agent_id,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "action": [self.action.a, self.action.b, self.action.c],
            "log_prob": self.log_prob,
            "general": self.general,
            "exclusive": self.exclusive,
            "reward": self.reward,
            "advantage": self.advantage,
            "terminal": self.terminal,
        }
        if include_latent and self.latent is not None:
            record["latent"] = self.latent.tolist()
        return record


@dataclass(frozen=True)
class DecisionEvent:
    agent_id: int
    time: float
    observation: Observation
    previous: TransitionFrame | None = None


@dataclass
class _OpenMacro:
    o_start: Observation
    action: MacroAction
    latent: np.ndarray | None
    log_prob: float
    t_start: float
    lifetime_start: float
    charging: list[tuple[float, float]] = field(default_factory=list)


def plan_macro(charger: ChargerState, action: MacroAction, state: NetworkState) -> deque[Leg]:
    """Low-level legs for ``action``, prefixed by a BS detour when the charger cannot afford it.

    The affordability check reserves the way back to the base station after
    charging, so a charger following its plan never runs dry.
    """
    params = state.params
    bs = state.instance.base_station
    dest = action.point
    alive = state.alive
    rates = charge_rate(np.linalg.norm(state.instance.sensors[alive] - dest, axis=1), params)
    draw = float(np.sum(rates))

    required = (
        params.P_M * float(np.linalg.norm(dest - charger.position))
        + action.c * draw
        + params.P_M * float(np.linalg.norm(bs - dest))
    )
    legs: deque[Leg] = deque()
    duration = action.c
    if charger.energy < required:
        travel = 2 * params.P_M * float(np.linalg.norm(bs - dest))
        if travel + duration * draw > params.E_max:
            duration = max((params.E_max - travel) / draw, 0.0) if draw > 0 else duration
            logger.debug(f"Charger {charger.id}: charge shortened to {duration:.1f}s to fit the battery")
        legs.append(Leg(LegKind.RETURN, target=bs.copy()))
        legs.append(Leg(LegKind.RECHARGE))
        legs.append(Leg(LegKind.MOVE, target=dest))
    elif not np.array_equal(charger.position, dest):
        legs.append(Leg(LegKind.MOVE, target=dest))
    if duration > 0:
        legs.append(Leg(LegKind.CHARGE, duration=duration))
    return legs


def reward_general(
    t1: float,
    t2: float,
    lifetime_t1: float,
    lifetime_t2: float,
    *,
    r_scale: float = 1000.0,
    as_printed: bool = False,
) -> float:
    """Change of the estimated absolute death time between ``t1`` and ``t2``.

    Zero when the estimate only decays with elapsed time. ``as_printed`` flips
    the sign, which rewards letting the estimate fall.
    """
    if t2 <= t1:
        raise ValueError(f"t2 ({t2}) must be after t1 ({t1})")
    gain = (lifetime_t2 - lifetime_t1) + (t2 - t1)
    return (-gain if as_printed else gain) / r_scale


def exclusive_rate(state: NetworkState, charger: ChargerState) -> float:
    """Criticality-weighted charging power of ``charger`` right now (0 unless charging)."""
    leg = charger.leg
    if leg is None or leg.kind != LegKind.CHARGE:
        return 0.0
    params = state.params
    alive = state.alive
    rates = charge_rate(np.linalg.norm(state.instance.sensors[alive] - charger.position, axis=1), params)
    weights = state.p[alive] / np.maximum(state.energy[alive] - params.e_th, params.e_floor)
    return float(np.sum(rates * weights))


def reward_exclusive(trajectory: Sequence[tuple[float, float]], *, r_scale_ex: float = 1.0) -> float:
    """Sum of ``duration * weighted rate`` over the charging samples of one macro action."""
    return sum(duration * rate for duration, rate in trajectory) / r_scale_ex


def total_reward(general: float, exclusive: float, ablation: Ablation = Ablation.FULL) -> float:
    return (general if ablation.uses_general else 0.0) + (exclusive if ablation.uses_exclusive else 0.0)


class ChargingEnv:
    """Event-driven wrapper around ``NetworkState``.

    Usage::

        env.reset(seed)
        while (event := env.run_until_next_decision()) is not None:
            env.act(event.agent_id, choose(event))

    Every closed macro action is appended to ``frames``.
    """

    def __init__(
        self,
        instance: ScenarioInstance,
        config: EnvConfig | None = None,
        *,
        routing: RoutingTable | None = None,
    ):
        self.instance = instance
        self.config = config or EnvConfig()
        self.routing = routing or build_routing(instance)
        self.grid = ObservationGrid.from_instance(instance, self.config.grid_size, self.config.kernel_width)
        self.t_max = self.config.t_max or instance.params.t_sm

        self.state: NetworkState | None = None
        self.frames: list[TransitionFrame] = []
        self.events: list[SimEvent] = []
        self.truncated = False
        self._open: dict[int, _OpenMacro] = {}
        self._pending: deque[DecisionEvent] = deque()
        self._done = True

    @property
    def n_agents(self) -> int:
        return self.config.n_chargers

    @property
    def done(self) -> bool:
        return self._done and not self._pending

    @property
    def clock(self) -> float:
        return self.state.clock if self.state is not None else 0.0

    def observe(self, agent: int) -> Observation:
        return render(self.state, agent, self.grid, self.config.ablation.mask, self.config.f4_anchor)

    def reset(self, seed: int = 0, *, energy: np.ndarray | None = None) -> None:
        self.state = NetworkState.create(
            self.instance, n_chargers=self.config.n_chargers, seed=seed, routing=self.routing, energy=energy
        )
        if self.state.dead:
            raise DegenerateScenarioError("network is dead at deployment")
        self.frames = []
        self.events = []
        self.truncated = False
        self._open = {}
        for _ in range(self.config.warmup_steps):
            self.events.extend(self.state.step(self.config.dt))
            if self.state.dead:
                raise DegenerateScenarioError(f"network died during warm-up at t={self.state.clock}")
        self._done = False
        self._pending = deque(
            DecisionEvent(agent_id=k, time=self.state.clock, observation=self.observe(k)) for k in range(self.n_agents)
        )

    def act(
        self,
        agent: int,
        action: MacroAction,
        *,
        latent: np.ndarray | None = None,
        log_prob: float = 0.0,
        observation: Observation | None = None,
    ) -> None:
        """Start ``action`` for ``agent``; only valid right after its decision event."""
        if agent in self._open:
            raise ValueError(f"agent {agent} already executes a macro action")
        h0, h1, w0, w1 = self.instance.bounds
        pad = self.instance.params.r_charge + 1e-9
        if not (h0 - pad <= action.a <= h1 + pad and w0 - pad <= action.b <= w1 + pad):
            raise ValueError(f"macro action ({action.a}, {action.b}) outside bounds {self.instance.bounds}")

        charger = self.state.chargers[agent]
        charger.schedule = plan_macro(charger, action, self.state)
        self._open[agent] = _OpenMacro(
            o_start=observation or self.observe(agent),
            action=action,
            latent=latent,
            log_prob=log_prob,
            t_start=self.state.clock,
            lifetime_start=estimate_remaining_lifetime(self.state),
        )
        legs = [leg.kind.value for leg in charger.schedule]
        logger.debug(f"t={self.state.clock}: charger {agent} -> {action}, legs={legs}")

    def run_until_next_decision(self) -> DecisionEvent | None:
        """Next decision event, or ``None`` once the episode is over.

        Chargers terminating in the same step are queued in ascending id.
        """
        if self._pending:
            return self._pending.popleft()
        if self._done:
            return None
        missing = set(range(self.n_agents)) - set(self._open)
        if missing:
            raise ValueError(f"agents {sorted(missing)} have no macro action")

        state = self.state
        dt = self.config.dt
        while True:
            for agent, macro in self._open.items():
                charger = state.chargers[agent]
                leg = charger.leg
                if leg is not None and leg.kind == LegKind.CHARGE:
                    macro.charging.append((min(dt, leg.duration), exclusive_rate(state, charger)))
            self.events.extend(state.step(dt))

            if state.dead or state.clock >= self.t_max - 1e-9:
                self.truncated = not state.dead
                for agent in sorted(self._open):
                    self._close(agent, terminal=state.dead)
                self._done = True
                logger.debug(f"Episode over at t={state.clock} ({'death' if state.dead else 'cap'})")
                return None

            finished = sorted(agent for agent in self._open if not state.chargers[agent].schedule)
            if finished:
                for agent in finished:
                    frame = self._close(agent, terminal=False)
                    self._pending.append(
                        DecisionEvent(agent_id=agent, time=state.clock, observation=frame.o_end, previous=frame)
                    )
                return self._pending.popleft()

    def _close(self, agent: int, *, terminal: bool) -> TransitionFrame:
        macro = self._open.pop(agent)
        state = self.state
        t_end = state.clock
        lifetime_end = estimate_remaining_lifetime(state)
        general = reward_general(
            macro.t_start,
            t_end,
            macro.lifetime_start,
            lifetime_end,
            r_scale=self.config.r_scale,
            as_printed=self.config.reward_sign_as_printed,
        )
        exclusive = reward_exclusive(macro.charging, r_scale_ex=self.config.r_scale_ex)
        frame = TransitionFrame(
            agent_id=agent,
            o_start=macro.o_start,
            action=macro.action,
            latent=macro.latent,
            log_prob=macro.log_prob,
            o_end=self.observe(agent),
            t_start=macro.t_start,
            t_end=t_end,
            general=general,
            exclusive=exclusive,
            reward=total_reward(general, exclusive, self.config.ablation),
            terminal=terminal,
        )
        self.frames.append(frame)
        return frame
