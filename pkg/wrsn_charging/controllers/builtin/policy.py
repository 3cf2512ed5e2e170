from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import torch

from wrsn_charging.action import direct_action, select_action
from wrsn_charging.controllers.base import Controller, Decision
from wrsn_charging.controllers.extensions import hookimpl
from wrsn_charging.env import Ablation, ChargingEnv, DecisionEvent
from wrsn_charging.errors import CheckpointMismatchError, ConfigError
from wrsn_charging.neural import Actor, actor_forward, check_compatible, load_checkpoint, log_prob, sample_map, sample_vector


class PolicyController(Controller):
    """Samples the actor of the deciding agent and turns the sample into a macro action.

    One actor is shared by every agent; otherwise agent ``k`` uses ``actors[k]``.
    """

    name = "checkpoint"

    def __init__(
        self,
        actors: Sequence[Actor],
        ablation: Ablation = Ablation.FULL,
        *,
        deterministic: bool = False,
        seed: int = 0,
    ):
        if not actors:
            raise ConfigError("policy controller needs at least one actor")
        self.actors = list(actors)
        self.ablation = ablation
        self.deterministic = deterministic
        self.generator = torch.Generator().manual_seed(seed)
        self.manifest = None

    @classmethod
    def from_checkpoint(cls, path: Path | str, *, deterministic: bool = False) -> PolicyController:
        manifest, actors, _ = load_checkpoint(path)
        controller = cls(actors, manifest.ablation, deterministic=deterministic, seed=manifest.seed)
        controller.manifest = manifest
        return controller

    def actor_for(self, agent: int) -> Actor:
        return self.actors[0] if len(self.actors) == 1 else self.actors[agent]

    def reset(self, env: ChargingEnv, seed: int) -> None:
        if len(self.actors) not in (1, env.n_agents):
            raise CheckpointMismatchError(f"{len(self.actors)} actors for {env.n_agents} chargers")
        if self.manifest is not None:
            check_compatible(self.manifest, env.instance.bounds, env.config.grid_size)
        self.generator.manual_seed(seed)

    def decide(self, event: DecisionEvent, env: ChargingEnv) -> Decision:
        actor = self.actor_for(event.agent_id)
        with torch.no_grad():
            mean, log_std = actor_forward(actor, event.observation.tensor)
            mean = mean[0]
            if self.ablation.direct_action:
                if self.deterministic:
                    x, lp = mean, log_prob(mean, log_std, mean)
                else:
                    x, lp = sample_vector(mean, log_std, self.generator)
                action = direct_action(x.numpy(), env.instance)
            else:
                if self.deterministic:
                    x, lp = mean, log_prob(mean, log_std, mean)
                else:
                    x, _, lp = sample_map(mean, log_std, self.generator)
                # float64 keeps the map normalized to well under 1e-6
                pr = torch.softmax(x.double().flatten(), dim=0).reshape(x.shape)
                action = select_action(pr.numpy(), env.state, env.grid)
        return Decision(action=action, latent=x.numpy().copy(), log_prob=float(lp))


@hookimpl
def register(manager):
    def _factory(argument: str | None) -> PolicyController:
        if not argument:
            raise ConfigError("usage: checkpoint:<path>")
        return PolicyController.from_checkpoint(argument)

    manager.register(PolicyController.name, _factory)
