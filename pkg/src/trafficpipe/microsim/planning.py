"""Route planning with decaying re-planning, and departure-time sampling."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import MalformedRow

REROUTE_SCHEDULE = (1.0, 1.0, 0.5, 0.25)


def init_edge_weights(lengths, lanes, speeds) -> np.ndarray:
    """Initial routing weight ``sqrt(lanes) * length / speed`` per edge.

    Multi-lane edges get proportionally larger weights than their free-flow
    time; this is the documented initial estimate and is kept verbatim.
    """
    lengths = np.asarray(lengths, dtype=float)
    lanes = np.asarray(lanes, dtype=float)
    speeds = np.asarray(speeds, dtype=float)
    if np.any(lanes < 1) or np.any(speeds <= 0) or np.any(lengths <= 0):
        raise ValueError("lanes, speeds and lengths must be positive")
    return np.sqrt(lanes) * lengths / speeds


def reroute_fraction(iteration: int) -> float:
    """Share of vehicles re-planned in a 1-based iteration: 1, 1, 1/2, then 1/4."""
    if iteration < 1:
        raise ValueError("iterations are numbered from 1")
    return REROUTE_SCHEDULE[min(iteration, len(REROUTE_SCHEDULE)) - 1]


def select_reroutes(n_vehicles: int, iteration: int, rng) -> np.ndarray:
    """Sorted indices of the vehicles whose route is recomputed."""
    frac = reroute_fraction(iteration)
    if frac >= 1.0:
        return np.arange(n_vehicles)
    k = int(math.floor(frac * n_vehicles + 0.5))
    return np.sort(rng.choice(n_vehicles, size=k, replace=False))


def use_all_pairs(n_nodes: int, n_edges: int, n_origins: int) -> bool:
    """Pick all-pairs precomputation when repeated single-source searches
    are estimated to cost more (``origins * (E + V) log V > V E log V``)."""
    log_v = math.log2(max(n_nodes, 2))
    return n_origins * (n_edges + n_nodes) * log_v > n_nodes * n_edges * log_v


@dataclass
class RoutePlan:
    routes: dict  # vehicle index -> list of edge indices
    rerouted: np.ndarray
    method: str  # "single_source" | "all_pairs"


def plan_routes(net, trips, weights, iteration: int, rng, previous=None,
                workers: int = 1, method: str | None = None) -> RoutePlan:
    """Shortest-path routes for a share of the vehicles.

    ``trips`` is a sequence of ``(origin_index, dest_index)`` per vehicle.
    Vehicles not selected this iteration keep their route from ``previous``
    (and vehicles with no previous route are always planned).
    """
    n = len(trips)
    selected = select_reroutes(n, iteration, rng)
    routes = dict(previous or {})
    todo = sorted(set(selected.tolist()) | {i for i in range(n) if i not in routes})
    by_origin: dict = {}
    for i in todo:
        by_origin.setdefault(trips[i][0], []).append(i)
    if method is None:
        method = "all_pairs" if use_all_pairs(net.n_nodes, net.n_edges, len(by_origin)) else "single_source"
    sources = range(net.n_nodes) if method == "all_pairs" else sorted(by_origin)

    def tree(src):
        return src, net.shortest_tree(src, weights)[1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = dict(pool.map(tree, sources))
    else:
        trees = dict(map(tree, sources))
    for origin, vehicles in by_origin.items():
        pred = trees[origin]
        for i in vehicles:
            routes[i] = net.path_edges(pred, origin, trips[i][1])
    return RoutePlan(routes, selected, method)


@dataclass(frozen=True)
class DepartureHistogram:
    buckets: tuple  # ((start_s, end_s, frequency), ...)

    def __post_init__(self):
        if not self.buckets:
            raise ValueError("histogram needs at least one bucket")
        prev_end = -math.inf
        for start, end, freq in sorted(self.buckets):
            if not end > start or freq < 0 or start < prev_end:
                raise ValueError("buckets must be non-overlapping with end > start and frequency >= 0")
            prev_end = end
        if sum(b[2] for b in self.buckets) <= 0:
            raise ValueError("total frequency must be positive")

    @classmethod
    def read(cls, path) -> DepartureHistogram:
        path = Path(path)
        rows = []
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if not {"bucket_start_s", "bucket_end_s", "frequency"} <= set(reader.fieldnames or []):
                raise MalformedRow(path, 1, "expected bucket_start_s,bucket_end_s,frequency")
            for line, row in enumerate(reader, start=2):
                try:
                    rows.append((float(row["bucket_start_s"]), float(row["bucket_end_s"]),
                                 float(row["frequency"])))
                except (TypeError, ValueError) as exc:
                    raise MalformedRow(path, line, str(exc)) from None
        try:
            return cls(tuple(rows))
        except ValueError as exc:
            raise MalformedRow(path, 0, str(exc)) from None


def sample_departures(hist: DepartureHistogram, n: int, rng, bucket: int | None = None) -> np.ndarray:
    """Departure times: a bucket drawn by frequency, then a uniform time inside it.

    With ``bucket`` given, every sample is drawn from that bucket.
    """
    starts = np.array([b[0] for b in hist.buckets])
    ends = np.array([b[1] for b in hist.buckets])
    if bucket is None:
        freq = np.array([b[2] for b in hist.buckets], dtype=float)
        chosen = rng.choice(len(freq), size=n, p=freq / freq.sum())
    else:
        chosen = np.full(n, bucket)
    return starts[chosen] + rng.random(n) * (ends[chosen] - starts[chosen])
