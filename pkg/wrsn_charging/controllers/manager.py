from __future__ import annotations

import importlib
from collections.abc import Callable
from pathlib import Path

import pluggy

from wrsn_charging.controllers import builtin as builtin_package
from wrsn_charging.controllers import extensions
from wrsn_charging.controllers.base import Controller
from wrsn_charging.controllers.extensions import project_name as PROJECT_NAME
from wrsn_charging.errors import ConfigError
from wrsn_charging.log import logger

ControllerFactory = Callable[[str | None], Controller]


class ControllerManager:
    """Name -> controller factory registry.

    Specs passed to :meth:`create` are ``name`` or ``name:argument``, for
    example ``random`` or ``checkpoint:runs/x/checkpoints/final``.
    """

    def __init__(self):
        self.pm = pluggy.PluginManager(PROJECT_NAME)
        self.pm.add_hookspecs(extensions)
        self._factories: dict[str, ControllerFactory] = {}

        self._load_builtin()
        self.pm.load_setuptools_entrypoints(PROJECT_NAME)
        self.pm.hook.register(manager=self)

        logger.debug(f"Found {len(self._factories)} controllers: {self.names}")

    @property
    def names(self) -> list[str]:
        return sorted(self._factories)

    def _load_builtin(self):
        """
        Import all python files of the builtin package and register them as plugins.
        """
        modules = Path(builtin_package.__path__[0]).glob("*.py")
        for stem in sorted(p.stem for p in modules if p.name != "__init__.py"):
            name = f"{builtin_package.__name__}.{stem}"
            logger.debug(f"loading {name}")
            self.pm.register(importlib.import_module(name))

    def register(self, name: str, factory: ControllerFactory) -> None:
        """
        Register a controller factory, if the name is already registered, skip it.
        """
        if name in self._factories:
            logger.debug(f"Controller {name!r} already registered, skipping")
            return
        self._factories[name] = factory

    def create(self, spec: str) -> Controller:
        name, _, argument = spec.partition(":")
        factory = self._factories.get(name)
        if factory is None:
            raise ConfigError(f"unknown controller {name!r}, available: {', '.join(self.names)}")
        return factory(argument or None)
