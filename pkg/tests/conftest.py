from __future__ import annotations

import math

import pytest

from trafficpipe.attributes import EdgeAttributes, compute_bpr_coefficients
from trafficpipe.graph import EdgeRecord, NodeRecord, RoadGraph

M_PER_DEG = 6_371_000.0 * math.pi / 180.0


def make_graph(nodes, arcs, road_type="primary"):
    """``nodes``: {id: (lat, lon)} or an iterable of ids (placed on a line).

    ``arcs``: tuples ``(u, v, length[, key[, lanes[, maxspeed]]])``.
    """
    if not isinstance(nodes, dict):
        nodes = {n: (0.0, 0.001 * i) for i, n in enumerate(sorted(nodes))}
    recs = [NodeRecord(n, lat, lon) for n, (lat, lon) in nodes.items()]
    edges = []
    for arc in arcs:
        u, v, length, *rest = arc
        key = rest[0] if len(rest) > 0 else 0
        lanes = rest[1] if len(rest) > 1 else None
        maxspeed = rest[2] if len(rest) > 2 else None
        edges.append(EdgeRecord(u, v, key, road_type, float(length), lanes=lanes, maxspeed=maxspeed))
    return RoadGraph(recs, edges)


def bpr_edge(u, v, key, t0, cap, alpha=0.15, beta=4.0, length=100.0):
    """Edge carrying explicit BPR parameters."""
    attrs = EdgeAttributes(
        lanes=1, lanes_imputed=False, free_flow_speed=length / t0, speed_source="tagged",
        capacity_per_sec=cap, t0=t0, alpha=alpha, beta=beta, a0=t0, a4=t0 * alpha / cap**beta,
    )
    return EdgeRecord(u, v, key, "primary", length, lanes=1, attrs=attrs)


def bpr_graph(n_nodes, edges):
    """``edges``: ``(u, v, key, t0, cap)`` tuples."""
    nodes = [NodeRecord(i, 0.0, 0.001 * i) for i in range(n_nodes)]
    return RoadGraph(nodes, [bpr_edge(*e) for e in edges])


def corridor(lengths, lanes=1, speed_mph=65, turn=None, road_type="primary"):
    """Straight east-west road of consecutive edges (plus optional reverse
    edges) on the equator, enriched and ready for simulation.

    ``lanes`` may be an int or a per-edge list.
    """
    if isinstance(lanes, int):
        lanes = [lanes] * len(lengths)
    lon = [0.0]
    for L in lengths:
        lon.append(lon[-1] + L / M_PER_DEG)
    nodes = [NodeRecord(i, 0.0, x) for i, x in enumerate(lon)]
    edges = [
        EdgeRecord(i, i + 1, 0, road_type, float(L), lanes=n, maxspeed=speed_mph)
        for i, (L, n) in enumerate(zip(lengths, lanes))
    ]
    return compute_bpr_coefficients(RoadGraph(nodes, edges))


@pytest.fixture
def two_route():
    """Parallel routes 0 -> 1: t0 = 10 s and 15 s, capacity 1 veh/s each."""
    return bpr_graph(2, [(0, 1, 0, 10.0, 1.0), (0, 1, 1, 15.0, 1.0)])


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
