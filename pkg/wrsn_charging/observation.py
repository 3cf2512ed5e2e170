"""Gaussian-kernel field maps stacked into a 4 x T x T observation."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from wrsn_charging.energy import ChargerMode, NetworkState
from wrsn_charging.scenario import ScenarioInstance

N_CHANNELS = 4


class ObservationMask(str, enum.Enum):
    FULL = "FULL"
    NO_1 = "NO_1"
    NO_2_3_4 = "NO_2_3_4"

    @property
    def keep(self) -> tuple[bool, bool, bool, bool]:
        if self is ObservationMask.NO_1:
            return (False, True, True, True)
        if self is ObservationMask.NO_2_3_4:
            return (True, False, False, False)
        return (True, True, True, True)


class F4Anchor(str, enum.Enum):
    DESTINATION = "destination"
    CURRENT = "current"


@dataclass(frozen=True)
class ObservationGrid:
    size: int
    bounds: tuple[float, float, float, float]
    kernel_width: float

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"grid size must be >= 2, got {self.size}")
        if self.kernel_width <= 0:
            raise ValueError(f"kernel width must be positive, got {self.kernel_width}")

    @classmethod
    def from_instance(cls, instance: ScenarioInstance, size: int, kernel_width: float | None = None) -> ObservationGrid:
        return cls(size=size, bounds=instance.bounds, kernel_width=kernel_width or instance.params.r_c)

    @property
    def cell_size(self) -> tuple[float, float]:
        h0, h1, w0, w1 = self.bounds
        return (h1 - h0) / self.size, (w1 - w0) / self.size

    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center offsets from (H0, W0) along both axes."""
        i = np.arange(1, self.size + 1) - 0.5
        dh, dw = self.cell_size
        return i * dh, i * dw

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        oh, ow = self.offsets()
        return self.bounds[0] + oh, self.bounds[2] + ow

    def cell_of(self, point: np.ndarray) -> tuple[int, int]:
        """Zero-based cell containing ``point`` (clamped to the grid)."""
        dh, dw = self.cell_size
        u = int(np.clip((point[0] - self.bounds[0]) // dh, 0, self.size - 1))
        v = int(np.clip((point[1] - self.bounds[2]) // dw, 0, self.size - 1))
        return u, v


@dataclass(frozen=True)
class Observation:
    tensor: np.ndarray
    agent_id: int
    timestamp: float


def kernel(x: np.ndarray, x_prime: np.ndarray, h: float) -> float:
    diff = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return float(np.exp(-(diff @ diff) / (2 * h * h)))


def _sources_f1(state: NetworkState) -> tuple[np.ndarray, np.ndarray]:
    params = state.params
    alive = state.alive
    headroom = np.maximum(state.energy[alive] - params.e_th, params.e_floor)
    weights = state.p[alive] / params.beta**2 * ((params.e_max - params.e_th) / headroom)
    return state.instance.sensors[alive], weights


def _sources_f2(state: NetworkState, agent: int) -> tuple[np.ndarray, np.ndarray]:
    charger = state.chargers[agent]
    return charger.position[None, :], np.array([charger.energy / state.params.E_max])


def _sources_f3(state: NetworkState, agent: int) -> tuple[np.ndarray, np.ndarray]:
    t_norm = state.params.e_max - state.params.e_th
    others = [c for c in state.chargers if c.id != agent and c.mode == ChargerMode.CHARGING]
    if not others:
        return np.empty((0, 2)), np.empty(0)
    return np.array([c.position for c in others]), np.array([c.remaining_charge / t_norm for c in others])


def _sources_f4(state: NetworkState, agent: int, anchor: F4Anchor) -> tuple[np.ndarray, np.ndarray]:
    others = [
        c
        for c in state.chargers
        if c.id != agent and c.mode == ChargerMode.MOVING and c.destination is not None
    ]
    if not others:
        return np.empty((0, 2)), np.empty(0)
    points = np.array([c.destination if anchor == F4Anchor.DESTINATION else c.position for c in others])
    weights = np.array([np.linalg.norm(c.position - c.destination) / state.instance.d_avg for c in others])
    return points, weights


def _point_field(points: np.ndarray, weights: np.ndarray, x: np.ndarray, h: float) -> float:
    if not len(weights):
        return 0.0
    sq = np.sum((points - np.asarray(x, dtype=float)) ** 2, axis=1)
    return float(weights @ np.exp(-sq / (2 * h * h)))


def field_f1(state: NetworkState, x: np.ndarray, h: float) -> float:
    return _point_field(*_sources_f1(state), x, h)


def field_f2(state: NetworkState, agent: int, x: np.ndarray, h: float) -> float:
    return _point_field(*_sources_f2(state, agent), x, h)


def field_f3(state: NetworkState, agent: int, x: np.ndarray, h: float) -> float:
    return _point_field(*_sources_f3(state, agent), x, h)


def field_f4(state: NetworkState, agent: int, x: np.ndarray, h: float, anchor: F4Anchor = F4Anchor.DESTINATION) -> float:
    return _point_field(*_sources_f4(state, agent, anchor), x, h)


def _grid_field(grid: ObservationGrid, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.size, grid.size))
    if not len(weights):
        return out
    oh, ow = grid.offsets()
    # coordinates relative to (H0, W0) keep the map invariant under translation
    rel_h = points[:, 0] - grid.bounds[0]
    rel_w = points[:, 1] - grid.bounds[2]
    two_h2 = 2 * grid.kernel_width**2
    kh = np.exp(-((oh[None, :] - rel_h[:, None]) ** 2) / two_h2)
    kw = np.exp(-((ow[None, :] - rel_w[:, None]) ** 2) / two_h2)
    return np.einsum("n,ni,nk->ik", weights, kh, kw, out=out)


def render(
    state: NetworkState,
    agent: int,
    grid: ObservationGrid,
    mask: ObservationMask = ObservationMask.FULL,
    anchor: F4Anchor = F4Anchor.DESTINATION,
) -> Observation:
    keep = mask.keep
    sources = (
        lambda: _sources_f1(state),
        lambda: _sources_f2(state, agent),
        lambda: _sources_f3(state, agent),
        lambda: _sources_f4(state, agent, anchor),
    )
    tensor = np.zeros((N_CHANNELS, grid.size, grid.size), dtype=np.float32)
    for channel, (kept, source) in enumerate(zip(keep, sources)):
        if kept:
            tensor[channel] = _grid_field(grid, *source())
    return Observation(tensor=tensor, agent_id=agent, timestamp=state.clock)
