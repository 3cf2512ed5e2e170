import itertools
import math

import numpy as np
import pydantic
import pytest

from wrsn_charging.errors import ConfigError, InfeasibleScenarioError, ScenarioParseError, ScenarioValidationError
from wrsn_charging.scenario import (
    BS,
    EnergyParams,
    ScenarioFile,
    build_routing,
    dump_instance,
    generate_instance,
    load_instance,
    save_instance,
    validate_instance,
)


class TestEnergyParams:
    def test_defaults(self):
        params = EnergyParams()
        assert params.d0 == pytest.approx(87.706, abs=1e-3)
        assert params.standard_charge_time == pytest.approx(2052.0)

    def test_explicit_crossover_kept(self):
        assert EnergyParams(d0=50.0).d0 == 50.0

    def test_threshold_must_be_below_capacity(self):
        with pytest.raises(pydantic.ValidationError):
            EnergyParams(e_th=100.0, e_max=100.0)


class TestLoadInstance:
    def test_minimal_valid(self, instance_factory):
        instance = instance_factory([(10, 0)], [(30, 0)], r_s=40.0)
        assert instance.n_sensors == 1
        assert instance.monitors == ((0,),)
        assert instance.monitored_targets == (frozenset({0}),)

    def test_uncovered_target(self, instance_factory):
        with pytest.raises(ScenarioValidationError, match="target 0 uncovered"):
            instance_factory([(10, 0)], [(100, 0)], r_s=40.0)

    def test_disconnected_monitor(self, instance_factory):
        with pytest.raises(ScenarioValidationError, match="sensor 0 disconnected"):
            instance_factory([(200, 0)], [(210, 0)])

    def test_d_avg_is_mean_pairwise_distance(self, instance_factory):
        points = np.random.default_rng(5).uniform(-60, 60, size=(50, 2))
        instance = instance_factory(points.tolist(), [points[0].tolist()])
        expected = np.mean([np.linalg.norm(p - q) for p, q in itertools.combinations(points, 2)])
        assert instance.d_avg == pytest.approx(expected)

    def test_bounds_are_sensor_extent(self, small_field):
        assert small_field.bounds == (-30.0, 60.0, -30.0, 30.0)

    def test_degenerate_extent_is_padded(self, single_sensor):
        h0, h1, w0, w1 = single_sensor.bounds
        assert (h0, h1) == (50 - 27.0, 50 + 27.0)
        assert (w0, w1) == (-27.0, 27.0)

    def test_non_finite_coordinate_rejected(self):
        with pytest.raises(pydantic.ValidationError):
            ScenarioFile(base_station=(0.0, 0.0), sensors=[(math.nan, 0.0)], targets=[(0.0, 0.0)])

    def test_save_and_load(self, small_field, tmp_path):
        path = save_instance(small_field, tmp_path / "nested" / "scenario.json")
        loaded = load_instance(path)
        np.testing.assert_array_equal(loaded.sensors, small_field.sensors)
        np.testing.assert_array_equal(loaded.targets, small_field.targets)
        assert loaded.params == small_field.params

    def test_unparsable_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ScenarioParseError):
            load_instance(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioParseError):
            load_instance(tmp_path / "absent.json")


class TestGenerateInstance:
    def test_deterministic(self):
        first = generate_instance(1, (1000, 1000), 5, 20)
        second = generate_instance(1, (1000, 1000), 5, 20)
        assert dump_instance(first) == dump_instance(second)

    def test_seed_changes_targets(self):
        first = generate_instance(1, (1000, 1000), 5, 20)
        second = generate_instance(2, (1000, 1000), 5, 20)
        assert not np.array_equal(first.targets, second.targets)

    @pytest.mark.parametrize("seed", [0, 1, 7])
    def test_output_is_valid(self, seed):
        instance = generate_instance(seed, (1000, 1000), 5, 20)
        validate_instance(instance)
        assert instance.n_targets == 5
        assert instance.n_sensors >= 20

    def test_repair_budget_exhausted(self):
        with pytest.raises(InfeasibleScenarioError) as exc_info:
            generate_instance(0, (1000, 1000), 5, 1, repair_budget=0)
        assert exc_info.value.n_targets == 5
        assert exc_info.value.exit_code == 3

    def test_invalid_sizes(self):
        with pytest.raises(ConfigError) as exc_info:
            generate_instance(0, (1000, 1000), 0, 5)
        assert exc_info.value.exit_code == 2
        with pytest.raises(ConfigError):
            generate_instance(0, (0, 1000), 1, 5)


class TestRouting:
    def test_chain(self, chain):
        routing = build_routing(chain)
        assert routing.next_hop == {1: 0, 0: BS}
        assert routing.hop_load == {0: 1, 1: 0}
        assert routing.chain(1) == [0, BS]
        assert not routing.dead_ends

    def test_tie_prefers_lower_index(self, instance_factory):
        instance = instance_factory([(50, 30), (50, -30), (100, 0)], [(110, 0)])
        assert build_routing(instance).next_hop[2] == 0

    def test_hop_load_matches_path_walk(self):
        instance = generate_instance(3, (400, 400), 4, 20)
        routing = build_routing(instance)
        counts = dict.fromkeys(range(instance.n_sensors), 0)
        for j in range(instance.n_sensors):
            node = j
            while node in routing.next_hop and routing.next_hop[node] != BS:
                node = routing.next_hop[node]
                counts[node] += 1
        assert routing.hop_load == counts

    def test_isolated_sensor_is_dead_end(self, instance_factory):
        instance = instance_factory([(50, 0), (0, 100)], [(55, 0)], r_s=10.0)
        routing = build_routing(instance)
        assert routing.dead_ends == frozenset({1})
        assert 1 not in routing.next_hop
        assert routing.chain(1) == []
