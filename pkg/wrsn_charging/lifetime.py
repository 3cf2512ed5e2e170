"""Bottleneck-path connection times and the remaining-lifetime estimate."""

from __future__ import annotations

import heapq
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from wrsn_charging.energy import NetworkState
from wrsn_charging.errors import OracleSizeError

BS_NODE = 0
BS_WEIGHT = math.inf
"""Base-station weight. Only ever compared, never added to finite weights."""

MAX_ORACLE_NODES = 12


@dataclass(frozen=True)
class LifetimeGraph:
    weights: Mapping[int, float]
    """Node id -> estimated lifetime (s). Node ``BS_NODE`` carries ``BS_WEIGHT``."""
    adjacency: Mapping[int, Sequence[int]] = field(repr=False)

    @classmethod
    def from_edges(cls, weights: Mapping[int, float], edges: Sequence[tuple[int, int]]) -> LifetimeGraph:
        adjacency: dict[int, list[int]] = {node: [] for node in [BS_NODE, *weights]}
        for i, j in edges:
            if i == j:
                continue
            adjacency[i].append(j)
            adjacency[j].append(i)
        weights = dict(weights)
        weights[BS_NODE] = BS_WEIGHT
        return cls(weights=weights, adjacency={k: sorted(set(v)) for k, v in adjacency.items()})

    @classmethod
    def from_state(cls, state: NetworkState) -> LifetimeGraph:
        """Graph over the BS and the alive sensors; sensor ``j`` is node ``j + 1``."""
        params = state.params
        alive = np.flatnonzero(state.alive)
        lifetimes = (state.energy - params.e_th) / np.maximum(state.p, params.p_min)
        weights = {BS_NODE: BS_WEIGHT}
        weights.update({int(j) + 1: max(float(lifetimes[j]), 0.0) for j in alive})
        adjacency = {
            node: [int(k) for k in state.instance.neighbors(node) if int(k) in weights] for node in weights
        }
        return cls(weights=weights, adjacency=adjacency)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.weights)
        graph.add_edges_from((i, j) for i, nbrs in self.adjacency.items() for j in nbrs)
        return graph


def connection_times(g: LifetimeGraph, *, trace: list[tuple[int, float]] | None = None) -> dict[int, float]:
    """CT(x0, x) for every node by max-min relaxation.

    The frontier is a heap keyed by ``(-d, id)``: largest estimate first,
    equal estimates lowest id first. When ``trace`` is given, each node is
    appended with its value at the moment it is finalized.
    """
    d = dict.fromkeys(g.weights, 0.0)
    d[BS_NODE] = BS_WEIGHT
    heap = [(-d[node], node) for node in g.weights]
    heapq.heapify(heap)
    done: set[int] = set()
    while heap:
        neg, x = heapq.heappop(heap)
        if x in done or -neg != d[x]:
            continue
        done.add(x)
        if trace is not None:
            trace.append((x, d[x]))
        for y in g.adjacency.get(x, ()):
            relaxed = max(d[y], min(d[x], g.weights[y]))
            if relaxed != d[y]:
                d[y] = relaxed
                heapq.heappush(heap, (-relaxed, y))
    return d


def brute_force_ct(g: LifetimeGraph) -> dict[int, float]:
    """Max over all simple BS paths of the minimum node weight; small graphs only."""
    if len(g.weights) > MAX_ORACLE_NODES:
        raise OracleSizeError(f"brute force limited to {MAX_ORACLE_NODES} nodes, got {len(g.weights)}")
    graph = g.to_networkx()
    ct = dict.fromkeys(g.weights, 0.0)
    ct[BS_NODE] = BS_WEIGHT
    for node in g.weights:
        if node == BS_NODE:
            continue
        for path in nx.all_simple_paths(graph, BS_NODE, node):
            ct[node] = max(ct[node], min(g.weights[x] for x in path))
    return ct


def min_max_lifetime(state: NetworkState, ct: Mapping[int, float]) -> float:
    """Min over targets of the best monitor's connection time."""
    estimate = math.inf
    for monitors in state.instance.monitors:
        best = max((ct.get(j + 1, 0.0) for j in monitors if state.alive[j]), default=0.0)
        estimate = min(estimate, best)
    return 0.0 if estimate == math.inf else estimate


def estimate_remaining_lifetime(state: NetworkState) -> float:
    if state.dead:
        return 0.0
    return min_max_lifetime(state, connection_times(LifetimeGraph.from_state(state)))
