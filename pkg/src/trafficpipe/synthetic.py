"""Synthetic, reproducible networks and demand for tests and benchmarks."""
from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import minimum_spanning_tree

from .geo import haversine
from .graph import ROAD_TYPES, EdgeRecord, NodeRecord, RoadGraph

_TYPE_WEIGHTS = np.array([3, 1, 2, 1, 6, 1, 8, 1, 10, 1, 3, 2], dtype=float)


def grid_network(n_nodes: int, n_edges: int | None = None, seed: int = 0,
                 spacing_m: float = 250.0, origin=(37.7, -122.3),
                 lane_missing: float = 0.3) -> RoadGraph:
    """Strongly connected road network laid out on a jittered grid.

    A random spanning tree of the grid is made two-way (so the graph is
    strongly connected) and extra one-way grid edges are added until the
    directed edge count reaches ``n_edges`` (default ``2.13 * n_nodes``).
    """
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n_nodes)))
    ids = np.arange(n_nodes)
    row, col = ids // side, ids % side
    dlat = spacing_m / 111_195.0
    dlon = dlat / np.cos(np.radians(origin[0]))
    lat = origin[0] + (row + rng.uniform(-0.25, 0.25, n_nodes)) * dlat
    lon = origin[1] + (col + rng.uniform(-0.25, 0.25, n_nodes)) * dlon

    right = ids[(col < side - 1) & (ids + 1 < n_nodes)]
    down = ids[ids + side < n_nodes]
    a = np.concatenate([right, down])
    b = np.concatenate([right + 1, down + side])
    w = rng.uniform(1.0, 2.0, len(a))
    tree = minimum_spanning_tree(coo_matrix((w, (a, b)), shape=(n_nodes, n_nodes))).tocoo()
    pairs = set()
    for u, v in zip(tree.row.tolist(), tree.col.tolist()):
        pairs.add((u, v))
        pairs.add((v, u))
    if n_edges is None:
        n_edges = int(round(2.13 * n_nodes))
    candidates = [(int(u), int(v)) for u, v in zip(a, b)] + [(int(v), int(u)) for u, v in zip(a, b)]
    for i in rng.permutation(len(candidates)):
        if len(pairs) >= n_edges:
            break
        pairs.add(candidates[i])

    probs = _TYPE_WEIGHTS / _TYPE_WEIGHTS.sum()
    nodes = [NodeRecord(int(i), float(lat[i]), float(lon[i])) for i in ids]
    edges = []
    for u, v in sorted(pairs):
        road_type = ROAD_TYPES[rng.choice(len(ROAD_TYPES), p=probs)]
        length = haversine(lat[u], lon[u], lat[v], lon[v])
        lanes = None if rng.random() < lane_missing else int(rng.integers(1, 5))
        edges.append(EdgeRecord(u, v, 0, road_type, float(length), lanes=lanes))
    return RoadGraph(nodes, edges)


def random_od(g: RoadGraph, n_pairs: int, total_trips: float, seed: int = 0,
              n_zones: int | None = None):
    """``n_pairs`` distinct node OD pairs carrying ``total_trips`` in total.

    Origins and destinations are drawn from ``n_zones`` random nodes (all
    nodes by default). Returns a list of ``(origin_id, dest_id, trips)``.
    """
    rng = np.random.default_rng(seed)
    node_ids = np.array(list(g.nodes), dtype=np.int64)
    if n_zones is not None:
        node_ids = rng.choice(node_ids, size=min(n_zones, len(node_ids)), replace=False)
    pairs: set = set()
    while len(pairs) < n_pairs:
        o, d = rng.choice(node_ids, 2, replace=False)
        pairs.add((int(o), int(d)))
    pairs_list = sorted(pairs)
    shares = rng.gamma(2.0, 1.0, len(pairs_list))
    trips = total_trips * shares / shares.sum()
    return [(o, d, float(t)) for (o, d), t in zip(pairs_list, trips)]


def write_scenario(out_dir, n_nodes: int = 100, n_zones: int = 10, n_pairs: int = 40,
                   total_trips: int = 500, seed: int = 0, control_share: float = 0.0) -> dict:
    """Write a complete set of raw input files for the command-line pipeline.

    Produces nodes/edges extracts, zones (centroids jittered around random
    nodes), integer zone trips, a two-bucket departure histogram and an
    optional controls file. Returns the written paths by name.
    """
    import csv
    from pathlib import Path

    from .graph import write_graph

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    g = grid_network(n_nodes, seed=seed)
    paths = {"nodes": out / "nodes.csv", "edges": out / "edges.csv", "zones": out / "zones.csv",
             "trips": out / "trips.csv", "departures": out / "departures.csv"}
    write_graph(g, paths["nodes"], paths["edges"])
    node_ids = list(g.nodes)
    centers = rng.choice(len(node_ids), size=n_zones, replace=False)
    with paths["zones"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone_id", "centroid_lat", "centroid_lon"])
        for z, i in enumerate(centers):
            n = g.nodes[node_ids[i]]
            w.writerow([z, repr(n.lat + rng.uniform(-2e-4, 2e-4)), repr(n.lon + rng.uniform(-2e-4, 2e-4))])
    pairs = sorted({(int(a), int(b)) for a, b in rng.integers(0, n_zones, size=(n_pairs, 2)) if a != b})
    counts = rng.multinomial(total_trips, np.full(len(pairs), 1.0 / len(pairs)))
    with paths["trips"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_zone", "dest_zone", "trips"])
        for (a, b), c in zip(pairs, counts):
            if c > 0:
                w.writerow([a, b, int(c)])
    with paths["departures"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket_start_s", "bucket_end_s", "frequency"])
        w.writerows([[0, 600, 1], [600, 1200, 3]])
    if control_share > 0:
        paths["controls"] = out / "controls.csv"
        with paths["controls"].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "control"])
            for nid in node_ids:
                if rng.random() < control_share:
                    w.writerow([nid, "stop" if rng.random() < 0.5 else "signal"])
    return paths
