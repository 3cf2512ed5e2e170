from wrsn_charging.controllers.base import Controller, Decision
from wrsn_charging.controllers.manager import ControllerManager

__all__ = ["Controller", "ControllerManager", "Decision"]
