"""Lifetime experiments: baseline drain, controlled episodes and the improvement ratio."""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from wrsn_charging.controllers.base import Controller
from wrsn_charging.energy import NetworkState
from wrsn_charging.env import ChargingEnv, EnvConfig
from wrsn_charging.log import logger
from wrsn_charging.scenario import ScenarioInstance


class LifetimeResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    F0: float
    """Death time (s), or the cap when ``censored``."""
    censored: bool
    seed: int
    dt: float


class ImprovementResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    F_B: float
    F0: float
    improvement: float
    censored_baseline: bool
    censored: bool
    seed: int


class EvaluationRow(BaseModel):
    scenario: str
    seed: int
    F_B: float
    F0: float
    improvement: float
    censored: bool


class EvaluationTable(BaseModel):
    controller: str
    rows: list[EvaluationRow]
    per_scenario: dict[str, float]
    """Mean improvement per scenario."""
    overall: float


def _baseline(instance: ScenarioInstance, *, seed: int, dt: float, t_max: float) -> LifetimeResult:
    state = NetworkState.create(instance, n_chargers=0, seed=seed)
    while not state.dead and state.clock < t_max - 1e-9:
        state.step(dt)
    return LifetimeResult(F0=state.clock, censored=not state.dead, seed=seed, dt=dt)


def play_episode(env: ChargingEnv, controller: Controller, seed: int) -> ChargingEnv:
    """Reset ``env`` and let ``controller`` drive every charger until the episode ends."""
    env.reset(seed)
    controller.reset(env, seed)
    while (event := env.run_until_next_decision()) is not None:
        decision = controller.decide(event, env)
        env.act(
            event.agent_id,
            decision.action,
            latent=decision.latent,
            log_prob=decision.log_prob,
            observation=event.observation,
        )
    return env


def simulate_lifetime(
    instance: ScenarioInstance,
    controller: Controller | None,
    *,
    seed: int = 0,
    config: EnvConfig | None = None,
) -> LifetimeResult:
    """Run until the network dies or the cap is reached.

    ``controller=None`` simulates the network without chargers.
    """
    config = config or EnvConfig()
    t_max = config.t_max or instance.params.t_sm
    if controller is None:
        result = _baseline(instance, seed=seed, dt=config.dt, t_max=t_max)
    else:
        env = play_episode(ChargingEnv(instance, config), controller, seed)
        result = LifetimeResult(F0=env.clock, censored=env.truncated, seed=seed, dt=config.dt)
    if result.censored:
        logger.warning(f"Lifetime censored at t_max={t_max}s (seed={seed})")
    return result


def lifetime_improvement(
    instance: ScenarioInstance,
    controller: Controller | None,
    *,
    seed: int = 0,
    config: EnvConfig | None = None,
    baseline: LifetimeResult | None = None,
) -> ImprovementResult:
    """``F0 / F_B``: lifetime with chargers over lifetime without."""
    baseline = baseline or simulate_lifetime(instance, None, seed=seed, config=config)
    controlled = simulate_lifetime(instance, controller, seed=seed, config=config)
    return ImprovementResult(
        F_B=baseline.F0,
        F0=controlled.F0,
        improvement=controlled.F0 / baseline.F0 if baseline.F0 > 0 else 1.0,
        censored_baseline=baseline.censored,
        censored=controlled.censored,
        seed=seed,
    )


def evaluate_many(
    instances: Mapping[str, ScenarioInstance],
    controller: Controller | None,
    seeds: Sequence[int],
    *,
    config: EnvConfig | None = None,
) -> EvaluationTable:
    rows = []
    per_scenario = {}
    for name, instance in instances.items():
        # the charger-free run has no randomness; one per scenario
        baseline = simulate_lifetime(instance, None, seed=seeds[0], config=config)
        scores = []
        for seed in seeds:
            result = lifetime_improvement(instance, controller, seed=seed, config=config, baseline=baseline)
            rows.append(
                EvaluationRow(
                    scenario=name,
                    seed=seed,
                    F_B=result.F_B,
                    F0=result.F0,
                    improvement=result.improvement,
                    censored=result.censored,
                )
            )
            scores.append(result.improvement)
        per_scenario[name] = float(np.mean(scores))
        logger.info(f"{name}: mean improvement {per_scenario[name]:.3f} over {len(seeds)} seeds")
    overall = float(np.mean(list(per_scenario.values()))) if per_scenario else 0.0
    return EvaluationTable(
        controller=controller.name if controller is not None else "none",
        rows=rows,
        per_scenario=per_scenario,
        overall=overall,
    )
