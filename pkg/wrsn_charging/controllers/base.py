from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from wrsn_charging.env import MacroAction

if TYPE_CHECKING:
    from wrsn_charging.env import ChargingEnv, DecisionEvent


@dataclass(frozen=True)
class Decision:
    action: MacroAction
    latent: np.ndarray | None = None
    """What the likelihood is evaluated on: the sampled map, or the direct 3-vector."""
    log_prob: float = 0.0


class Controller(ABC):
    name: str

    def reset(self, env: ChargingEnv, seed: int) -> None:
        """Called once per episode, after ``env.reset``."""

    @abstractmethod
    def decide(self, event: DecisionEvent, env: ChargingEnv) -> Decision:
        """Macro action for ``event.agent_id``."""

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"
