"""Turning a charging probability map (or a direct 3-vector) into a macro action."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from wrsn_charging.energy import NetworkState, charge_rate
from wrsn_charging.env import MacroAction
from wrsn_charging.log import logger
from wrsn_charging.observation import ObservationGrid
from wrsn_charging.scenario import EnergyParams, ScenarioInstance

START_FRACTIONS = (0.0, 0.5, 1.0)
SCAN_SIZE = 50


@dataclass(frozen=True)
class RegionD:
    a_lo: float
    a_hi: float
    b_lo: float
    b_hi: float

    def __post_init__(self):
        if not (self.a_lo < self.a_hi and self.b_lo < self.b_hi):
            raise ValueError(f"empty region {self}")

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.a_lo + self.a_hi) / 2, (self.b_lo + self.b_hi) / 2])

    @property
    def box(self) -> list[tuple[float, float]]:
        return [(self.a_lo, self.a_hi), (self.b_lo, self.b_hi)]

    def contains(self, point: np.ndarray) -> bool:
        return bool(self.a_lo <= point[0] <= self.a_hi and self.b_lo <= point[1] <= self.b_hi)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the box."""
        lo = np.array([self.a_lo, self.b_lo])
        hi = np.array([self.a_hi, self.b_hi])
        return np.linalg.norm(points - np.clip(points, lo, hi), axis=-1)


@dataclass(frozen=True)
class LocationResult:
    point: np.ndarray
    objective: float
    zero_gain: bool = False


@dataclass(frozen=True)
class ActionPlan:
    """Every intermediate of a map-based decision, kept for inspection."""

    action: MacroAction
    cell: tuple[int, int]
    p_max: float
    region: RegionD
    location: LocationResult


def argmax_cell(pr: np.ndarray) -> tuple[int, int, float]:
    """1-based ``(u, v)`` of the largest entry (first in row-major order) and its value."""
    pr = np.asarray(pr, dtype=float)
    if abs(float(pr.sum()) - 1.0) > 1e-6:
        raise ValueError(f"probability map sums to {pr.sum()}")
    flat = int(np.argmax(pr))
    u, v = np.unravel_index(flat, pr.shape)
    return int(u) + 1, int(v) + 1, float(pr.flat[flat])


def charging_time(p_max: float, params: EnergyParams) -> float:
    if not 0.0 <= p_max <= 1.0:
        raise ValueError(f"p_max must lie in [0, 1], got {p_max}")
    return p_max * params.standard_charge_time


def region_bounds(u_max: int, v_max: int, grid: ObservationGrid) -> RegionD:
    if not (1 <= u_max <= grid.size and 1 <= v_max <= grid.size):
        raise ValueError(f"cell ({u_max}, {v_max}) outside a {grid.size}x{grid.size} grid")
    h0, h1, w0, w1 = grid.bounds
    dh, dw = grid.cell_size
    return RegionD(
        a_lo=max(h0 + (u_max - 0.5) * dh, h0),
        a_hi=min(h0 + (u_max + 0.5) * dh, h1),
        b_lo=max(w0 + (v_max - 0.5) * dw, w0),
        b_hi=min(w0 + (v_max + 0.5) * dw, w1),
    )


def sensor_weights(state: NetworkState) -> tuple[np.ndarray, np.ndarray]:
    """Positions and ``p / (e - e_th)`` weights of the alive sensors."""
    params = state.params
    alive = state.alive
    weights = state.p[alive] / np.maximum(state.energy[alive] - params.e_th, params.e_floor)
    return state.instance.sensors[alive], weights


def charging_objective(point: np.ndarray, positions: np.ndarray, weights: np.ndarray, params: EnergyParams) -> float:
    if not len(weights):
        return 0.0
    d = np.linalg.norm(positions - point, axis=1)
    return float(weights @ charge_rate(d, params))


def _soft_objective(
    point: np.ndarray, positions: np.ndarray, weights: np.ndarray, params: EnergyParams, scale: float
) -> tuple[float, np.ndarray]:
    """Negated charging objective with the range cutoff replaced by a Gaussian fall-off, and its gradient."""
    sigma = params.r_charge / 4
    diff = point - positions
    d = np.linalg.norm(diff, axis=1)
    rate = params.alpha / (d + params.beta) ** 2
    d_rate = -2 * params.alpha / (d + params.beta) ** 3
    over = np.maximum(d - params.r_charge, 0.0)
    soft = np.exp(-((over / sigma) ** 2))
    d_soft = -2 * over / sigma**2 * soft
    value = weights @ (rate * soft)
    slope = weights * (d_rate * soft + rate * d_soft)
    unit = np.divide(diff, d[:, None], out=np.zeros_like(diff), where=d[:, None] > 0)
    grad = slope @ unit
    return -value / scale, -grad / scale


def _scan(region: RegionD, positions: np.ndarray, weights: np.ndarray, params: EnergyParams) -> np.ndarray:
    """Best point of a ``SCAN_SIZE`` x ``SCAN_SIZE`` lattice over the region, corners included."""
    a = np.linspace(region.a_lo, region.a_hi, SCAN_SIZE)
    b = np.linspace(region.b_lo, region.b_hi, SCAN_SIZE)
    points = np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1).reshape(-1, 2)
    values = charge_rate(cdist(points, positions), params) @ weights
    return points[int(np.argmax(values))]


def _active_objective(
    point: np.ndarray, positions: np.ndarray, weights: np.ndarray, params: EnergyParams, scale: float
):
    """Negated objective over a fixed set of in-range sensors, without the cutoff, and its gradient."""
    diff = point - positions
    d = np.linalg.norm(diff, axis=1)
    value = weights @ (params.alpha / (d + params.beta) ** 2)
    slope = weights * (-2 * params.alpha / (d + params.beta) ** 3)
    unit = np.divide(diff, d[:, None], out=np.zeros_like(diff), where=d[:, None] > 0)
    return -value / scale, -(slope @ unit) / scale


def _pull_into_range(candidate: np.ndarray, positions: np.ndarray, params: EnergyParams) -> list[np.ndarray]:
    """Copies of ``candidate`` moved onto the range circle of each sensor it just misses."""
    sigma = params.r_charge / 4
    d = np.linalg.norm(positions - candidate, axis=1)
    pulled = []
    for j in np.flatnonzero((d > params.r_charge) & (d <= params.r_charge + sigma)):
        reach = params.r_charge * (1 - 1e-9)
        pulled.append(positions[j] + (candidate - positions[j]) / d[j] * reach)
    return pulled


def optimize_location(state: NetworkState, region: RegionD) -> LocationResult:
    """Box-constrained maximum of the criticality-weighted charging power over ``region``.

    A lattice scan seeds multi-start L-BFGS-B on a smoothed objective; the
    scan winner is then polished over its own in-range sensors. Every
    candidate is ranked by the exact (cut-off) objective, so the result never
    loses to a start or to a lattice point.
    """
    params = state.params
    positions, weights = sensor_weights(state)
    near = region.distance(positions) <= params.r_charge
    positions, weights = positions[near], weights[near]
    if not len(weights) or not np.any(weights > 0):
        logger.debug(f"No sensor within charging range of {region}, using its center")
        return LocationResult(point=region.center, objective=0.0, zero_gain=True)

    lo = np.array([region.a_lo, region.b_lo])
    hi = np.array([region.a_hi, region.b_hi])
    scanned = _scan(region, positions, weights, params)
    starts = [lo + (hi - lo) * np.array([fa, fb]) for fa in START_FRACTIONS for fb in START_FRACTIONS]
    starts.append(region.center)
    starts.append(scanned)
    starts.extend(np.clip(positions, lo, hi))

    scale = float(weights.sum()) * params.alpha / params.beta**2
    options = {"ftol": 1e-15, "gtol": 1e-12, "maxiter": 200}
    candidates = list(starts)
    for x0 in starts:
        result = minimize(
            _soft_objective,
            x0,
            args=(positions, weights, params, scale),
            method="L-BFGS-B",
            jac=True,
            bounds=region.box,
            options=options,
        )
        x = np.clip(result.x, lo, hi)
        candidates.append(x)
        candidates.extend(np.clip(p, lo, hi) for p in _pull_into_range(x, positions, params))

    active = np.linalg.norm(positions - scanned, axis=1) <= params.r_charge
    if active.any():
        result = minimize(
            _active_objective,
            scanned,
            args=(positions[active], weights[active], params, scale),
            method="L-BFGS-B",
            jac=True,
            bounds=region.box,
            options=options,
        )
        candidates.append(np.clip(result.x, lo, hi))

    values = [charging_objective(c, positions, weights, params) for c in candidates]
    best = int(np.argmax(values))
    if values[best] <= 0:
        return LocationResult(point=region.center, objective=0.0, zero_gain=True)
    return LocationResult(point=np.asarray(candidates[best], dtype=float), objective=values[best])


def plan_action(pr: np.ndarray, state: NetworkState, grid: ObservationGrid) -> ActionPlan:
    u, v, p_max = argmax_cell(pr)
    c = charging_time(min(p_max, 1.0), state.params)
    region = region_bounds(u, v, grid)
    location = optimize_location(state, region)
    action = MacroAction(a=float(location.point[0]), b=float(location.point[1]), c=c)
    return ActionPlan(action=action, cell=(u, v), p_max=p_max, region=region, location=location)


def select_action(pr: np.ndarray, state: NetworkState, grid: ObservationGrid) -> MacroAction:
    return plan_action(pr, state, grid).action


def direct_action(vector: np.ndarray, instance: ScenarioInstance) -> MacroAction:
    """Map a normalized ``(a, b, c)`` vector onto the bounds and the standard charging time.

    Each component is clamped to [0, 1] first, so a zero vector lands at the
    lower corner with no charging.
    """
    x = np.clip(np.asarray(vector, dtype=float), 0.0, 1.0)
    h0, h1, w0, w1 = instance.bounds
    return MacroAction(
        a=h0 + x[0] * (h1 - h0),
        b=w0 + x[1] * (w1 - w0),
        c=x[2] * instance.params.standard_charge_time,
    )
