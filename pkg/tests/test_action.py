import numpy as np
import pytest

from wrsn_charging.action import (
    RegionD,
    argmax_cell,
    charging_objective,
    charging_time,
    direct_action,
    optimize_location,
    plan_action,
    region_bounds,
    select_action,
    sensor_weights,
)
from wrsn_charging.energy import NetworkState
from wrsn_charging.observation import ObservationGrid
from wrsn_charging.scenario import EnergyParams, generate_instance

PARAMS = EnergyParams()


@pytest.fixture
def grid_1000():
    return ObservationGrid(size=100, bounds=(0.0, 1000.0, 0.0, 1000.0), kernel_width=80.0)


class TestArgmaxCell:
    def test_one_hot(self):
        pr = np.zeros((8, 8))
        pr[3, 5] = 1.0
        assert argmax_cell(pr) == (4, 6, 1.0)

    def test_uniform_ties_first(self):
        pr = np.full((10, 10), 0.01)
        u, v, p_max = argmax_cell(pr)
        assert (u, v) == (1, 1)
        assert p_max == pytest.approx(0.01)

    def test_random_matches_scan(self, rng):
        pr = rng.random((12, 12))
        pr /= pr.sum()
        u, v, p_max = argmax_cell(pr)
        best = max(((pr[i, j], i, j) for i in range(12) for j in range(12)), key=lambda x: x[0])
        assert (u, v, p_max) == (best[1] + 1, best[2] + 1, best[0])

    def test_not_normalized(self):
        with pytest.raises(ValueError):
            argmax_cell(np.full((4, 4), 0.1))


class TestChargingTime:
    @pytest.mark.parametrize(("p_max", "expected"), [(1.0, 2052.0), (0.0, 0.0), (0.1, 205.2)])
    def test_values(self, p_max, expected):
        assert charging_time(p_max, PARAMS) == pytest.approx(expected)

    def test_linear(self):
        assert charging_time(0.3, PARAMS) + charging_time(0.2, PARAMS) == pytest.approx(charging_time(0.5, PARAMS))

    @pytest.mark.parametrize("p_max", [-0.1, 1.1])
    def test_out_of_range(self, p_max):
        with pytest.raises(ValueError):
            charging_time(p_max, PARAMS)


class TestRegionBounds:
    def test_interior(self, grid_1000):
        region = region_bounds(50, 50, grid_1000)
        assert (region.a_lo, region.a_hi) == pytest.approx((495.0, 505.0))
        assert (region.b_lo, region.b_hi) == pytest.approx((495.0, 505.0))

    def test_cell_width(self, grid_1000):
        for u in (2, 17, 99):
            region = region_bounds(u, 40, grid_1000)
            assert region.a_hi - region.a_lo == pytest.approx(10.0)

    def test_last_cell_clamped(self, grid_1000):
        region = region_bounds(100, 1, grid_1000)
        assert (region.a_lo, region.a_hi) == pytest.approx((995.0, 1000.0))
        assert (region.b_lo, region.b_hi) == pytest.approx((5.0, 15.0))

    def test_offset_bounds(self):
        grid = ObservationGrid(size=10, bounds=(-50.0, 50.0, 100.0, 200.0), kernel_width=80.0)
        region = region_bounds(3, 4, grid)
        assert (region.a_lo, region.a_hi) == pytest.approx((-25.0, -15.0))
        assert (region.b_lo, region.b_hi) == pytest.approx((135.0, 145.0))

    def test_out_of_grid(self, grid_1000):
        with pytest.raises(ValueError):
            region_bounds(0, 1, grid_1000)

    def test_empty_region(self):
        with pytest.raises(ValueError):
            RegionD(1.0, 1.0, 0.0, 2.0)


class TestOptimizeLocation:
    def test_single_sensor_optimum(self, instance_factory):
        instance = instance_factory([(33.3, -12.7)], [(40.0, -10.0)])
        state = NetworkState.create(instance)
        result = optimize_location(state, RegionD(25.0, 45.0, -20.0, 0.0))
        assert not result.zero_gain
        np.testing.assert_allclose(result.point, [33.3, -12.7], atol=0.01)

    def test_no_sensor_in_range(self, single_sensor):
        state = NetworkState.create(single_sensor)
        region = RegionD(-40.0, -30.0, -5.0, 5.0)
        result = optimize_location(state, region)
        assert result.zero_gain
        np.testing.assert_array_equal(result.point, region.center)
        assert result.objective == 0.0

    def test_dead_sensors_ignored(self, single_sensor):
        state = NetworkState.create(single_sensor)
        state.alive[0] = False
        assert optimize_location(state, RegionD(45.0, 55.0, -5.0, 5.0)).zero_gain

    def test_two_sensors_dense_grid(self, instance_factory):
        instance = instance_factory([(0.0, 0.0), (12.0, 0.0)], [(6.0, 0.0)])
        state = NetworkState.create(instance)
        region = RegionD(2.0, 10.0, -4.0, 4.0)
        result = optimize_location(state, region)
        positions, weights = sensor_weights(state)
        a = np.linspace(region.a_lo, region.a_hi, 50)
        b = np.linspace(region.b_lo, region.b_hi, 50)
        best = max(charging_objective(np.array([x, y]), positions, weights, PARAMS) for x in a for y in b)
        assert result.objective >= best - 1e-9
        assert region.contains(result.point)

    @pytest.mark.parametrize("seed", range(100))
    def test_never_loses_to_dense_grid(self, seed):
        instance = generate_instance(seed, (200.0, 200.0), 3, 10)
        rng = np.random.default_rng(seed)
        state = NetworkState.create(instance)
        n = instance.n_sensors
        state.energy[:] = rng.uniform(PARAMS.e_th + 1, PARAMS.e_max, n)
        state.p[:] = rng.uniform(1e-5, 1e-3, n)
        anchor = instance.sensors[rng.integers(n)] + rng.uniform(-20, 20, 2)
        half = rng.uniform(2.5, 15.0, 2)
        region = RegionD(anchor[0] - half[0], anchor[0] + half[0], anchor[1] - half[1], anchor[1] + half[1])

        result = optimize_location(state, region)
        positions, weights = sensor_weights(state)
        a = np.linspace(region.a_lo, region.a_hi, 50)
        b = np.linspace(region.b_lo, region.b_hi, 50)
        best = max(charging_objective(np.array([x, y]), positions, weights, PARAMS) for x in a for y in b)
        assert result.objective >= best - 1e-9
        assert region.contains(result.point)
        assert result.objective == pytest.approx(charging_objective(result.point, positions, weights, PARAMS))

    def test_never_worse_than_starts(self, small_field, rng):
        state = NetworkState.create(small_field)
        state.energy[:] = rng.uniform(1000, 10800, 5)
        state.p[:] = rng.uniform(1e-4, 1e-2, 5)
        region = RegionD(20.0, 50.0, -10.0, 20.0)
        result = optimize_location(state, region)
        positions, weights = sensor_weights(state)
        lo, hi = np.array([20.0, -10.0]), np.array([50.0, 20.0])
        starts = [lo + (hi - lo) * np.array([fa, fb]) for fa in (0, 0.5, 1) for fb in (0, 0.5, 1)]
        assert result.objective >= max(charging_objective(s, positions, weights, PARAMS) for s in starts)
        assert region.contains(result.point)

    def test_adding_sensor_never_hurts(self, instance_factory):
        region = RegionD(0.0, 20.0, 0.0, 20.0)
        before = optimize_location(NetworkState.create(instance_factory([(5.0, 5.0)], [(5.0, 6.0)])), region)
        extra = (before.point + np.array([3.0, 0.0])).tolist()
        after = optimize_location(
            NetworkState.create(instance_factory([(5.0, 5.0), extra], [(5.0, 6.0)])), region
        )
        assert after.objective >= before.objective


class TestSelectAction:
    def test_one_hot_at_sensor(self, single_sensor):
        state = NetworkState.create(single_sensor)
        grid = ObservationGrid.from_instance(single_sensor, 9)
        u, v = grid.cell_of(single_sensor.sensors[0])
        pr = np.zeros((9, 9))
        pr[u, v] = 1.0
        action = select_action(pr, state, grid)
        assert action.c == pytest.approx(2052.0)
        np.testing.assert_allclose(action.point, single_sensor.sensors[0], atol=0.01)

    def test_uniform_map(self, small_field):
        state = NetworkState.create(small_field)
        grid = ObservationGrid.from_instance(small_field, 16)
        plan = plan_action(np.full((16, 16), 1 / 256), state, grid)
        assert plan.cell == (1, 1)
        assert plan.action.c == pytest.approx(2052.0 / 256)
        assert plan.region.contains(plan.action.point)

    def test_direct_zero_vector(self, small_field):
        action = direct_action(np.zeros(3), small_field)
        assert (action.a, action.b, action.c) == (-30.0, -30.0, 0.0)

    def test_direct_clamped(self, small_field):
        action = direct_action(np.array([2.0, -1.0, 0.5]), small_field)
        assert (action.a, action.b) == (60.0, -30.0)
        assert action.c == pytest.approx(1026.0)
