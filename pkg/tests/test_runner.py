import pytest

from wrsn_charging.controllers import Controller, Decision
from wrsn_charging.controllers.builtin.idle import IdleController
from wrsn_charging.controllers.builtin.uniform import RandomController
from wrsn_charging.env import ChargingEnv, EnvConfig, MacroAction
from wrsn_charging.runner import evaluate_many, lifetime_improvement, play_episode, simulate_lifetime


class ParkAtSensor(Controller):
    """Keeps charging the first sensor."""

    name = "park"

    def decide(self, event, env):
        x, y = env.instance.sensors[0]
        return Decision(action=MacroAction(float(x), float(y), 100.0))


@pytest.fixture
def one_joule_per_second(instance_factory):
    # 50 m free-space hop costs 7.5e-8 J per bit
    return instance_factory([(50, 0)], [(60, 0)], b_packet=1 / 7.5e-8)


def config(**overrides):
    return EnvConfig(**{"n_chargers": 1, "grid_size": 16, **overrides})


class TestSimulateLifetime:
    def test_closed_form_drain(self, one_joule_per_second):
        result = simulate_lifetime(one_joule_per_second, None, config=config())
        assert result.F0 == pytest.approx(10260.0, abs=1.0)
        assert not result.censored

    def test_seed_independent_without_controller(self, short_lived):
        first = simulate_lifetime(short_lived, None, seed=0, config=config(dt=10.0))
        second = simulate_lifetime(short_lived, None, seed=1, config=config(dt=10.0))
        assert first.F0 == second.F0 == 3340.0

    def test_censored(self, small_field):
        result = simulate_lifetime(small_field, None, config=config(t_max=100.0))
        assert result.F0 == 100.0
        assert result.censored

    def test_controlled_censored(self, small_field):
        result = simulate_lifetime(small_field, RandomController(), config=config(t_max=50.0, dt=5.0))
        assert result.F0 == 50.0
        assert result.censored


class TestImprovement:
    def test_idle_matches_baseline(self, short_lived):
        result = lifetime_improvement(short_lived, IdleController(), config=config(dt=10.0))
        assert result.F_B == result.F0 == 3340.0
        assert result.improvement == 1.0

    def test_charging_extends_lifetime(self, short_lived):
        result = lifetime_improvement(short_lived, ParkAtSensor(), config=config(dt=10.0, t_max=5000.0))
        assert result.F_B == 3340.0
        assert result.F0 == 5000.0
        assert result.censored
        assert result.improvement == pytest.approx(5000.0 / 3340.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_controller_never_shortens_single_sensor(self, short_lived, seed):
        result = lifetime_improvement(
            short_lived, RandomController(), seed=seed, config=config(dt=10.0, t_max=20000.0)
        )
        assert result.F_B == 3340.0
        assert result.improvement >= 1.0

    def test_play_episode_records_frames(self, short_lived):
        env = play_episode(ChargingEnv(short_lived, config(dt=10.0, t_max=1000.0)), ParkAtSensor(), 0)
        assert env.done
        assert env.frames
        assert all(f.t_end > f.t_start for f in env.frames)


class TestEvaluateMany:
    def test_table(self, short_lived, single_sensor):
        table = evaluate_many(
            {"short": short_lived, "long": single_sensor},
            IdleController(),
            [0, 1],
            config=config(dt=10.0, t_max=4000.0),
        )
        assert table.controller == "idle"
        assert [(r.scenario, r.seed) for r in table.rows] == [("short", 0), ("short", 1), ("long", 0), ("long", 1)]
        assert table.per_scenario == {"short": 1.0, "long": 1.0}
        assert table.overall == 1.0
        assert all(r.censored for r in table.rows if r.scenario == "long")

    def test_without_controller(self, short_lived):
        table = evaluate_many({"short": short_lived}, None, [0], config=config(dt=10.0))
        assert table.controller == "none"
        assert table.rows[0].improvement == 1.0
