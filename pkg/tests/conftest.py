from pathlib import Path

import numpy as np
import pytest

from wrsn_charging.scenario import EnergyParams, ScenarioFile, build_instance

_HERE = Path(__file__).parent


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run full training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def auto_patch_env(monkeypatch, tmp_path):
    monkeypatch.setenv("WRSN_OUT", (tmp_path / "runs").as_posix())
    monkeypatch.setenv("WRSN_CHARGERS", "2")


def make_instance(sensors, targets, base_station=(0.0, 0.0), **params):
    scenario = ScenarioFile(
        base_station=base_station,
        sensors=[tuple(map(float, p)) for p in sensors],
        targets=[tuple(map(float, p)) for p in targets],
        params=EnergyParams(**params),
    )
    return build_instance(scenario)


@pytest.fixture
def instance_factory():
    return make_instance


@pytest.fixture
def single_sensor():
    """BS at the origin, one sensor 50 m away monitoring one target."""
    return make_instance([(50, 0)], [(60, 0)])


@pytest.fixture
def chain():
    """BS - s0 - s1 spaced 50 m; s1 alone covers the target, s0 is a pure relay."""
    return make_instance([(50, 0), (100, 0)], [(130, 0)])


@pytest.fixture
def small_field():
    """Five sensors around the BS covering three targets."""
    sensors = [(30, 0), (-30, 0), (0, 30), (0, -30), (60, 20)]
    targets = [(40, 10), (-40, 0), (0, 40)]
    return make_instance(sensors, targets)


@pytest.fixture
def short_lived():
    """Single monitor draining 3e-4 J per second; dies after 3334 s without charging."""
    return make_instance([(50, 0)], [(60, 0)], e_max=2.0, e_th=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
