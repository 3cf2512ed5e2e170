from __future__ import annotations

from wrsn_charging.controllers.base import Controller, Decision
from wrsn_charging.controllers.extensions import hookimpl
from wrsn_charging.env import ChargingEnv, DecisionEvent, MacroAction


class RandomController(Controller):
    """Uniform location inside the bounds, uniform duration up to the standard charging time.

    Draws from the network's seeded generator, so an episode is reproducible
    from the environment seed alone.
    """

    name = "random"

    def decide(self, event: DecisionEvent, env: ChargingEnv) -> Decision:
        rng = env.state.rng
        h0, h1, w0, w1 = env.instance.bounds
        action = MacroAction(
            a=float(rng.uniform(h0, h1)),
            b=float(rng.uniform(w0, w1)),
            c=float(rng.uniform(0.0, env.instance.params.standard_charge_time)),
        )
        return Decision(action=action)


@hookimpl
def register(manager):
    manager.register(RandomController.name, lambda argument: RandomController())
