"""Static user-equilibrium assignment solved with Frank-Wolfe.

Volumes are in vehicles per second so they share units with the per-edge
capacities produced by :mod:`trafficpipe.attributes`.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NegativeVolume
from .graph import RoadGraph
from .network import ODArrays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FwConfig:
    max_iterations: int = 200
    gap_tolerance: float = 1e-4
    line_search_tolerance: float = 1e-10

    def __post_init__(self):
        if self.max_iterations < 1 or self.gap_tolerance <= 0 or self.line_search_tolerance <= 0:
            raise ValueError("Frank-Wolfe settings must all be positive")


@dataclass
class AssignmentState:
    volumes: np.ndarray
    times: np.ndarray
    iteration: int
    relative_gap: float
    objective: float
    converged: bool = False
    gap_trace: list = field(default_factory=list)
    best_gap_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    step_trace: list = field(default_factory=list)
    wall_time_ms: float = 0.0
    edge_keys: list = field(default_factory=list)
    # (aon_vectors, weights) when the solver is asked to keep them
    directions: tuple | None = None

    def summary(self) -> dict:
        return {
            "iterations": self.iteration,
            "relative_gap": self.relative_gap,
            "objective": self.objective,
            "wall_time_ms": self.wall_time_ms,
        }


class BprLinks:
    """Vectorized BPR curves for all edges of an enriched graph."""

    def __init__(self, g: RoadGraph):
        attrs = [e.attrs for e in g.edges.values()]
        if any(a is None for a in attrs):
            raise ValueError("graph has edges without BPR coefficients")
        self.t0 = np.array([a.t0 for a in attrs])
        self.alpha = np.array([a.alpha for a in attrs])
        self.beta = np.array([a.beta for a in attrs])
        self.capacity = np.array([a.capacity_per_sec for a in attrs])

    def times(self, v):
        return self.t0 * (1.0 + self.alpha * (v / self.capacity) ** self.beta)

    def integral(self, v):
        b1 = self.beta + 1.0
        return self.t0 * v + self.t0 * self.alpha * v**b1 / (b1 * self.capacity**self.beta)


def _links(g: RoadGraph) -> BprLinks:
    # cached on the graph instance; RoadGraph is immutable
    links = g.__dict__.get("_bpr_links")
    if links is None:
        links = BprLinks(g)
        g.__dict__["_bpr_links"] = links
    return links


def od_arrays(g: RoadGraph, demand) -> ODArrays:
    """Aggregate node demand records (any departure bucket) per OD pair."""
    index = g.arrays.node_index
    totals: dict = {}
    for r in demand:
        try:
            key = (index[r.origin_node], index[r.dest_node])
        except KeyError as exc:
            raise ValueError(f"demand references node {exc.args[0]} not in the graph") from None
        if key[0] == key[1]:
            continue
        totals[key] = totals.get(key, 0.0) + r.trips
    keys = sorted(totals)
    return ODArrays.build([k[0] for k in keys], [k[1] for k in keys], [totals[k] for k in keys])


def all_or_nothing(g: RoadGraph, demand, times, workers: int = 1) -> np.ndarray:
    """Edge volumes from loading each OD rate onto its shortest path by ``times``."""
    od = demand if isinstance(demand, ODArrays) else od_arrays(g, demand)
    return g.arrays.all_or_nothing(od, times, workers=workers)


def beckmann_objective(g: RoadGraph, volumes) -> float:
    """Sum over edges of the integral of the BPR curve from 0 to the volume."""
    volumes = np.asarray(volumes, dtype=float)
    if np.any(volumes < 0):
        raise NegativeVolume("volumes must be non-negative")
    return float(np.sum(_links(g).integral(volumes)))


def line_search(x, y, g: RoadGraph, tolerance: float = 1e-10) -> float:
    """Step in [0, 1] minimizing the objective along ``x + a (y - x)``.

    Bisection on the directional derivative
    ``sum((y - x) * t(x + a (y - x)))``; an endpoint is returned when the
    derivative does not change sign on [0, 1].
    """
    links = _links(g)
    x = np.asarray(x, dtype=float)
    d = np.asarray(y, dtype=float) - x

    def slope(a):
        return float(np.dot(d, links.times(np.maximum(x + a * d, 0.0))))

    if slope(0.0) >= 0.0:
        return 0.0
    if slope(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo >= tolerance:
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def relative_gap(x, y, t) -> float:
    tx = float(np.dot(x, t))
    if tx <= 0.0:
        return 0.0
    return max(0.0, (tx - float(np.dot(y, t))) / tx)


def frank_wolfe(g: RoadGraph, demand, cfg: FwConfig | None = None, workers: int = 1,
                keep_directions: bool = False) -> AssignmentState:
    """Solve static user equilibrium on an enriched graph.

    Starts from an all-or-nothing loading at free-flow times and alternates
    all-or-nothing search directions with exact line search until the
    relative gap drops below ``cfg.gap_tolerance`` or ``cfg.max_iterations``
    gaps have been evaluated. Not converging is reported, not raised.
    """
    cfg = cfg or FwConfig()
    started = time.perf_counter()
    links = _links(g)
    od = demand if isinstance(demand, ODArrays) else od_arrays(g, demand)

    x = all_or_nothing(g, od, links.t0, workers)
    history = ([x.copy()], [1.0]) if keep_directions else None
    state = AssignmentState(x, links.t0, 0, float("inf"), beckmann_objective(g, x),
                            edge_keys=list(g.edges))
    state.objective_trace.append(state.objective)
    best = float("inf")
    for k in range(1, cfg.max_iterations + 1):
        t = links.times(x)
        y = all_or_nothing(g, od, t, workers)
        gap = relative_gap(x, y, t)
        best = min(best, gap)
        state.gap_trace.append(gap)
        state.best_gap_trace.append(best)
        state.iteration = k
        log.debug("fw iteration %d gap %.3e objective %.10g", k, gap, state.objective)
        if gap < cfg.gap_tolerance:
            state.converged = True
            break
        if k == cfg.max_iterations:
            break
        step = line_search(x, y, g, cfg.line_search_tolerance)
        x = (1.0 - step) * x + step * y
        state.step_trace.append(step)
        if history is not None:
            history[1][:] = [w * (1.0 - step) for w in history[1]]
            history[0].append(y)
            history[1].append(step)
        state.objective = beckmann_objective(g, x)
        state.objective_trace.append(state.objective)

    state.volumes = x
    state.times = links.times(x)
    state.relative_gap = state.gap_trace[-1]
    state.directions = history
    state.wall_time_ms = (time.perf_counter() - started) * 1000.0
    log.info("assignment finished: %d iterations, gap %.3e, %.0f ms",
             state.iteration, state.relative_gap, state.wall_time_ms)
    return state


def write_flows(g: RoadGraph, state: AssignmentState, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "key", "volume_vps", "congested_time_s"])
        for (u, v, key), vol, t in zip(g.edges, state.volumes, state.times):
            w.writerow([u, v, key, repr(float(vol)), repr(float(t))])


def write_summary(state: AssignmentState, path) -> None:
    Path(path).write_text(json.dumps(state.summary(), indent=2) + "\n")
