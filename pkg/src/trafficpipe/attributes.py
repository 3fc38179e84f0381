"""Lane imputation, default speed/capacity tables and BPR link performance."""
from __future__ import annotations

import csv
import statistics
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import MalformedRow, NegativeVolume, NonPositiveInput, UnknownRoadType
from .graph import RoadGraph, load_graph

MPH_TO_MPS = 0.44704
DEFAULT_ALPHA = 0.15
DEFAULT_BETA = 4.0

# free-flow speed in mph, columns are lanes = 1, 2, 3, 4+
SPEED_TABLE = {
    "motorway": (50, 50, 65, 65),
    "motorway_link": (50, 50, 65, 65),
    "trunk": (45, 45, 45, 45),
    "trunk_link": (45, 45, 45, 45),
    "primary": (30, 30, 30, 30),
    "primary_link": (30, 30, 30, 30),
    "secondary": (25, 25, 25, 25),
    "secondary_link": (25, 25, 25, 25),
    "tertiary": (20, 20, 20, 20),
    "tertiary_link": (20, 20, 20, 20),
    "unclassified": (20, 20, 20, 20),
    "road": (30, 30, 30, 30),
}

# capacity in vehicles per lane per hour, columns are lanes = 1, 2, 3, 4+
CAPACITY_TABLE = {
    "motorway": (1900, 2000, 2000, 2200),
    "motorway_link": (1900, 2000, 2000, 2200),
    "trunk": (1900, 2000, 2000, 2000),
    "trunk_link": (1900, 2000, 2000, 2000),
    "primary": (1000, 1000, 1000, 1000),
    "primary_link": (1000, 1000, 1000, 1000),
    "secondary": (900, 900, 900, 900),
    "secondary_link": (900, 900, 900, 900),
    "tertiary": (900, 900, 900, 900),
    "tertiary_link": (900, 900, 900, 900),
    "unclassified": (800, 800, 800, 800),
    "road": (900, 900, 900, 900),
}

ENRICHED_COLUMNS = ("lanes_imputed", "free_flow_speed_mps", "capacity_vps", "t0_s", "a0", "a4")


@dataclass(frozen=True)
class EdgeAttributes:
    lanes: int
    lanes_imputed: bool
    free_flow_speed: float  # m/s
    speed_source: str  # "tagged" | "table"
    capacity_per_sec: float  # veh/s for the whole edge
    t0: float
    alpha: float
    beta: float
    a0: float
    a4: float


def _lookup(table, road_type: str, lanes: int):
    if road_type not in table:
        raise UnknownRoadType(f"no default for road type {road_type!r}")
    if lanes < 1:
        raise ValueError("lanes must be >= 1")
    return table[road_type][min(lanes, 4) - 1]


def infer_free_flow_speed(road_type: str, lanes: int) -> float:
    """Default free-flow speed in mph for an edge type and lane count."""
    return _lookup(SPEED_TABLE, road_type, lanes)


def infer_capacity(road_type: str, lanes: int) -> float:
    """Default capacity in vehicles per lane per hour."""
    return _lookup(CAPACITY_TABLE, road_type, lanes)


def free_flow_time(length_m: float, speed_mps: float) -> float:
    if length_m <= 0 or speed_mps <= 0:
        raise NonPositiveInput(f"length and speed must be positive, got {length_m}, {speed_mps}")
    return length_m / speed_mps


def _median_half_up(values) -> int:
    m = statistics.median(values)
    return int(np.floor(m + 0.5))


def impute_lanes(g: RoadGraph) -> RoadGraph:
    """Fill missing lane counts with the rounded median of the same road type.

    Even-sized medians are rounded half-up; a type with no tagged edge at all
    falls back to one lane. Tagged values are never touched.
    """
    known = defaultdict(list)
    for e in g.edges.values():
        if e.lanes is not None:
            known[e.road_type].append(e.lanes)
    fill = {t: _median_half_up(v) for t, v in known.items()}
    if all(e.lanes is not None for e in g.edges.values()):
        return g
    edges = []
    for e in g.edges.values():
        if e.lanes is None:
            e = replace(e, lanes=fill.get(e.road_type, 1), lanes_imputed=True)
        edges.append(e)
    return g.with_edges(edges)


def edge_attributes(edge, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> EdgeAttributes:
    if edge.lanes is None:
        raise ValueError(f"edge {edge.id} has no lane count; impute lanes first")
    if edge.maxspeed is not None:
        speed_mph, source = edge.maxspeed, "tagged"
    else:
        speed_mph, source = infer_free_flow_speed(edge.road_type, edge.lanes), "table"
    speed = speed_mph * MPH_TO_MPS
    capacity = infer_capacity(edge.road_type, edge.lanes) * edge.lanes / 3600.0
    t0 = free_flow_time(edge.length, speed)
    return EdgeAttributes(
        lanes=edge.lanes,
        lanes_imputed=edge.lanes_imputed,
        free_flow_speed=speed,
        speed_source=source,
        capacity_per_sec=capacity,
        t0=t0,
        alpha=alpha,
        beta=beta,
        a0=t0,
        a4=t0 * alpha / capacity**beta,
    )


def compute_bpr_coefficients(g: RoadGraph, alpha: float = DEFAULT_ALPHA,
                             beta: float = DEFAULT_BETA) -> RoadGraph:
    """Attach :class:`EdgeAttributes` (speed, capacity, t0, a0, a4) to every edge."""
    return g.with_edges(replace(e, attrs=edge_attributes(e, alpha, beta)) for e in g.edges.values())


def _attrs(edge) -> EdgeAttributes:
    return edge if isinstance(edge, EdgeAttributes) else edge.attrs


def bpr_time(edge, v: float) -> float:
    """Congested travel time ``t0 * (1 + alpha * (v / c) ** beta)`` in seconds.

    ``edge`` may be an enriched edge or its :class:`EdgeAttributes`.
    """
    attrs = _attrs(edge)
    if v < 0:
        raise NegativeVolume(f"volume must be non-negative, got {v}")
    return attrs.t0 * (1.0 + attrs.alpha * (v / attrs.capacity_per_sec) ** attrs.beta)


def bpr_time_polynomial(edge, v: float) -> float:
    """Same curve written with the stored coefficients, ``a0 + a4 * v ** beta``."""
    attrs = _attrs(edge)
    if v < 0:
        raise NegativeVolume(f"volume must be non-negative, got {v}")
    return attrs.a0 + attrs.a4 * v**attrs.beta


def enriched_columns():
    """Column name to accessor mapping for the enriched edges CSV."""
    return {
        "lanes_imputed": lambda e: int(e.attrs.lanes_imputed),
        "free_flow_speed_mps": lambda e: e.attrs.free_flow_speed,
        "capacity_vps": lambda e: e.attrs.capacity_per_sec,
        "t0_s": lambda e: e.attrs.t0,
        "a0": lambda e: e.attrs.a0,
        "a4": lambda e: e.attrs.a4,
    }


def load_enriched_graph(nodes_file, edges_file, alpha: float = DEFAULT_ALPHA,
                        beta: float = DEFAULT_BETA) -> RoadGraph:
    """Read a graph written with the enrichment columns.

    Free-flow speed and capacity come from the file; t0, a0 and a4 are
    recomputed for the requested ``alpha``/``beta``.
    """
    g = load_graph(nodes_file, edges_file)
    with Path(edges_file).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ENRICHED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MalformedRow(edges_file, 1, f"not an enriched edges file, missing {missing}")
        rows = {}
        for line, row in enumerate(reader, start=2):
            try:
                rows[(int(row["from"]), int(row["to"]), int(row["key"]))] = (
                    bool(int(row["lanes_imputed"])),
                    float(row["free_flow_speed_mps"]),
                    float(row["capacity_vps"]),
                )
            except (TypeError, ValueError) as exc:
                raise MalformedRow(edges_file, line, str(exc)) from None
    edges = []
    for e in g.edges.values():
        imputed, speed, capacity = rows[e.id]
        if e.lanes is None or speed <= 0 or capacity <= 0:
            raise MalformedRow(edges_file, 0, f"edge {e.id} lacks lanes, speed or capacity")
        t0 = free_flow_time(e.length, speed)
        attrs = EdgeAttributes(
            lanes=e.lanes, lanes_imputed=imputed, free_flow_speed=speed,
            speed_source="tagged" if e.maxspeed is not None else "table",
            capacity_per_sec=capacity, t0=t0, alpha=alpha, beta=beta,
            a0=t0, a4=t0 * alpha / capacity**beta,
        )
        edges.append(replace(e, lanes_imputed=imputed, attrs=attrs))
    return g.with_edges(edges)
