from __future__ import annotations

from wrsn_charging.controllers.base import Controller, Decision
from wrsn_charging.controllers.extensions import hookimpl
from wrsn_charging.env import ChargingEnv, DecisionEvent, MacroAction


class IdleController(Controller):
    """Stays where it is and never charges; every macro action lasts one step."""

    name = "idle"

    def decide(self, event: DecisionEvent, env: ChargingEnv) -> Decision:
        position = env.state.chargers[event.agent_id].position
        return Decision(action=MacroAction(a=float(position[0]), b=float(position[1]), c=0.0))


@hookimpl
def register(manager):
    manager.register(IdleController.name, lambda argument: IdleController())
