"""Iterated simulation with route re-planning, plus the CSV writers."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .control import IntersectionControl
from .engine import RoadNetwork, SimConfig, World
from .planning import DepartureHistogram, init_edge_weights, plan_routes, reroute_fraction, sample_departures
from .vehicles import VehicleState

log = logging.getLogger(__name__)

_LC_STREAM = 1
_PLAN_STREAM = 2
_DEMAND_STREAM = 3
HORIZON_SLACK_S = 3 * 3600.0


class LaneChangeStreams:
    """Per-vehicle generators created on first use.

    Each stream depends only on ``(seed, iteration, vehicle id)``, so random
    draws never depend on how vehicles are split across workers.
    """

    def __init__(self, seed: int, iteration: int):
        self.seed = seed
        self.iteration = iteration
        self._cache: dict = {}

    def __getitem__(self, vid: int):
        rng = self._cache.get(vid)
        if rng is None:
            rng = np.random.default_rng([self.seed, _LC_STREAM, self.iteration, vid])
            self._cache[vid] = rng
        return rng


@dataclass
class VehicleSpec:
    """Trip attributes that stay fixed across iterations."""

    id: int
    cls: str
    origin: int  # node index
    dest: int
    departure: float


@dataclass
class IterationRecord:
    iteration: int
    reroute_fraction: float
    n_rerouted: int
    route_method: str
    departed: int
    arrived: int
    sim_time_s: float
    convergence: float  # mean |weight - measured| / measured over visited edges
    wall_time_s: float


@dataclass
class EdgeInterval:
    edge: int
    interval_start_s: float
    utilization: float
    mean_speed_mps: float


@dataclass
class SimulationReport:
    vehicles: list
    iterations: list
    edge_series: list
    conservation: list  # (t, departed, arrived, active) from the last iteration
    weights: np.ndarray
    edge_keys: list
    route_history: list = field(default_factory=list)  # routes per iteration

    @property
    def reroute_fractions(self) -> list:
        return [r.reroute_fraction for r in self.iterations]

    @property
    def convergence(self) -> list:
        return [r.convergence for r in self.iterations]


def build_vehicles(g, demand, hist: DepartureHistogram, cfg: SimConfig, seed: int) -> list:
    """One vehicle per trip with sampled departure time and class."""
    net = g.arrays
    rng = np.random.default_rng([seed, _DEMAND_STREAM])
    specs = []
    for rec in demand:
        n = rec.trips
        if n < 0 or n != math.floor(n):
            raise ConfigError(f"vehicle demand needs whole trip counts, got {n} for "
                              f"{rec.origin_node}->{rec.dest_node}")
        n = int(n)
        if n == 0:
            continue
        bucket = rec.departure_bucket
        if bucket is not None and not 0 <= bucket < len(hist.buckets):
            raise ConfigError(f"departure bucket {bucket} is not in the histogram")
        times = sample_departures(hist, n, rng, bucket=bucket)
        trucks = rng.random(n) < cfg.truck_share
        o, d = net.node_index[rec.origin_node], net.node_index[rec.dest_node]
        for t, is_truck in zip(times, trucks):
            specs.append(VehicleSpec(len(specs), "truck" if is_truck else "car", o, d, float(t)))
    return specs


def _convergence(weights, measured, visited) -> float:
    if not visited.any():
        return 0.0
    m = measured[visited]
    return float(np.mean(np.abs(weights[visited] - m) / m))


def group_samples(samples, road: RoadNetwork, cfg: SimConfig) -> list:
    """Average per-minute samples in groups of ``samples_per_group``.

    Utilization is averaged over the group's samples. Mean speed is the
    average of the per-sample mean speeds over samples where the edge was
    occupied. Edges that stayed empty for the whole group are omitted.
    """
    from .engine import utilization

    out = []
    k = cfg.samples_per_group
    width = k * cfg.sample_interval
    for g0 in range(0, len(samples), k):
        group = samples[g0:g0 + k]
        counts = np.array([c for _, c, _ in group], dtype=float)
        speeds = np.array([s for _, _, s in group])
        util = np.mean([utilization(c, road, cfg) for c in counts], axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_sample = np.where(counts > 0, speeds / np.maximum(counts, 1), np.nan)
        occupied = (counts > 0).any(axis=0)
        start = (g0 // k) * width
        for e in np.flatnonzero(occupied):
            col = per_sample[:, e]
            out.append(EdgeInterval(int(e), start, float(util[e]), float(np.mean(col[~np.isnan(col)]))))
    return out


def run_iterations(g, demand, hist: DepartureHistogram, n_iter: int = 4, cfg: SimConfig | None = None,
                   seed: int = 0, controls: dict | None = None, keep_routes: bool = False) -> SimulationReport:
    """Plan, simulate, measure edge times and feed them back as routing weights."""
    if n_iter < 1:
        raise ConfigError("n_iter must be at least 1")
    cfg = cfg or SimConfig()
    road = RoadNetwork(g)
    net = road.net
    specs = build_vehicles(g, demand, hist, cfg, seed)
    trips = [(s.origin, s.dest) for s in specs]
    weights = init_edge_weights(road.length, road.lanes, road.speed)
    control = IntersectionControl(net, controls or {}, cfg.phase_duration)
    last_departure = max((s.departure for s in specs), default=0.0)
    max_time = cfg.max_time if cfg.max_time is not None else last_departure + HORIZON_SLACK_S
    plan_rng = np.random.default_rng([seed, _PLAN_STREAM])
    routes = None
    records, history = [], []
    world = None
    for it in range(1, n_iter + 1):
        t0 = time.perf_counter()
        plan = plan_routes(net, trips, weights, it, plan_rng, previous=routes, workers=cfg.workers)
        routes = plan.routes
        if keep_routes:
            history.append({i: list(r) for i, r in routes.items()})
        vehicles = [
            VehicleState(s.id, cfg.truck if s.cls == "truck" else cfg.car, s.origin, s.dest,
                         s.departure, route=routes[s.id])
            for s in specs
        ]
        control.reset()
        world = World(road, vehicles, control, cfg, LaneChangeStreams(seed, it))
        world.run(max_time)
        visited = world.edge_time_count > 0
        measured = np.zeros_like(weights)
        measured[visited] = world.edge_time_sum[visited] / world.edge_time_count[visited]
        conv = _convergence(weights, measured, visited)
        weights = weights.copy()
        weights[visited] = measured[visited]
        rec = IterationRecord(
            it, reroute_fraction(it), len(plan.rerouted), plan.method, world.counters.departed,
            world.counters.arrived, world.t, conv, time.perf_counter() - t0,
        )
        records.append(rec)
        log.info("microsim iteration", extra={"fields": rec.__dict__})
    return SimulationReport(
        vehicles=world.vehicles,
        iterations=records,
        edge_series=group_samples(world.samples, road, cfg),
        conservation=world.conservation,
        weights=weights,
        edge_keys=road.edge_keys,
        route_history=history,
    )


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def edge_label(key) -> str:
    u, v, k = key
    return f"{u}-{v}-{k}"


VEHICLE_COLUMNS = ["id", "class", "departure_s", "travel_time_s", "distance_m", "fuel_mL", "co_g", "n_edges"]
EDGE_SERIES_COLUMNS = ["edge", "interval_start_s", "utilization", "mean_speed_mps"]


def write_vehicles(report: SimulationReport, path) -> None:
    """Per-vehicle outcomes; travel time is blank for vehicles that did not arrive."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VEHICLE_COLUMNS)
        for veh in report.vehicles:
            w.writerow([
                veh.id, veh.params.cls, _fmt(veh.departure),
                _fmt(veh.travel_time) if veh.arrived else "",
                _fmt(veh.cum_distance), _fmt(veh.cum_fuel), _fmt(veh.cum_co), veh.edges_traversed,
            ])


def write_edge_series(report: SimulationReport, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_SERIES_COLUMNS)
        for row in sorted(report.edge_series, key=lambda r: (r.interval_start_s, r.edge)):
            w.writerow([edge_label(report.edge_keys[row.edge]), _fmt(row.interval_start_s),
                        _fmt(row.utilization), _fmt(row.mean_speed_mps)])
