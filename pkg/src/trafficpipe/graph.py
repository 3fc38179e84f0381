"""Directed road multigraph: loading, road-type filtering, largest strongly
connected component and topology simplification.

Edges are keyed by ``(u, v, key)`` like an OSM-derived multidigraph; parallel
edges and self-loops are allowed.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import TYPE_CHECKING, Iterable, Mapping
from xml.etree import ElementTree as ET

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DanglingEdge, EmptyGraph, MalformedRow
from .geo import polyline_length

if TYPE_CHECKING:
    from .attributes import EdgeAttributes

log = logging.getLogger(__name__)

ROAD_TYPES = (
    "motorway",
    "motorway_link",
    "trunk",
    "trunk_link",
    "primary",
    "primary_link",
    "secondary",
    "secondary_link",
    "tertiary",
    "tertiary_link",
    "unclassified",
    "road",
)
OTHER = "other"
MAJOR_ROAD_TYPES = frozenset(ROAD_TYPES)

NODE_COLUMNS = ("id", "lat", "lon")
EDGE_COLUMNS = ("from", "to", "key", "road_type", "length", "lanes", "maxspeed", "geometry")

EdgeKey = tuple  # (u, v, key)


@dataclass(frozen=True)
class NodeRecord:
    id: int
    lat: float
    lon: float


@dataclass(frozen=True)
class EdgeRecord:
    u: int
    v: int
    key: int
    road_type: str
    length: float
    lanes: int | None = None
    maxspeed: float | None = None  # mph
    geometry: tuple | None = None  # ((lat, lon), ...)
    lanes_imputed: bool = False
    attrs: EdgeAttributes | None = None

    @property
    def id(self) -> EdgeKey:
        return (self.u, self.v, self.key)


class RoadGraph:
    """Immutable directed multigraph of intersections and road segments.

    Nodes and edges are exposed as read-only mappings sorted by id, so every
    iteration order is deterministic.
    """

    def __init__(self, nodes: Iterable[NodeRecord], edges: Iterable[EdgeRecord]):
        node_list = sorted(nodes, key=lambda n: n.id)
        node_map = {n.id: n for n in node_list}
        if len(node_map) != len(node_list):
            raise ValueError("duplicate node ids")
        edge_list = sorted(edges, key=lambda e: e.id)
        for e in edge_list:
            if e.u not in node_map or e.v not in node_map:
                raise DanglingEdge(e.u, e.v)
        edge_map = {e.id: e for e in edge_list}
        if len(edge_map) != len(edge_list):
            raise ValueError("duplicate (from, to, key) edge identifiers")
        self.nodes: Mapping[int, NodeRecord] = MappingProxyType(node_map)
        self.edges: Mapping[EdgeKey, EdgeRecord] = MappingProxyType(edge_map)

    def __repr__(self):
        return f"RoadGraph(|N|={len(self.nodes)}, |E|={len(self.edges)})"

    def __eq__(self, other):
        if not isinstance(other, RoadGraph):
            return NotImplemented
        return dict(self.nodes) == dict(other.nodes) and dict(self.edges) == dict(other.edges)

    __hash__ = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def total_length(self) -> float:
        return math.fsum(e.length for e in self.edges.values())

    @cached_property
    def _adjacency(self):
        out_edges = defaultdict(list)
        in_edges = defaultdict(list)
        for e in self.edges.values():
            out_edges[e.u].append(e)
            in_edges[e.v].append(e)
        return out_edges, in_edges

    def out_edges(self, node: int) -> list[EdgeRecord]:
        return self._adjacency[0].get(node, [])

    def in_edges(self, node: int) -> list[EdgeRecord]:
        return self._adjacency[1].get(node, [])

    def degree(self, node: int) -> int:
        return len(self.out_edges(node)) + len(self.in_edges(node))

    def with_edges(self, edges: Iterable[EdgeRecord]) -> RoadGraph:
        """Same node set with a replacement edge set."""
        return RoadGraph(self.nodes.values(), edges)

    @cached_property
    def arrays(self):
        """Index-based CSR view used by the numerical solvers."""
        from .network import NetworkArrays

        return NetworkArrays.from_graph(self)


# --------------------------------------------------------------------- I/O


def _opt_int(s: str):
    s = s.strip()
    if not s:
        return None
    value = float(s)
    if value != int(value) or value < 1:
        raise ValueError(f"lanes must be a positive integer, got {s!r}")
    return int(value)


def _opt_float(s: str):
    s = s.strip()
    if not s:
        return None
    value = float(s)
    if not value > 0:
        raise ValueError(f"expected a positive number, got {s!r}")
    return value


def parse_geometry(s: str):
    s = s.strip()
    if not s:
        return None
    points = []
    for pair in s.split(";"):
        lat, lon = pair.split()
        points.append((float(lat), float(lon)))
    return tuple(points)


def format_geometry(geometry) -> str:
    if not geometry:
        return ""
    return ";".join(f"{lat!r} {lon!r}" for lat, lon in geometry)


def _check_header(reader, expected, path):
    header = reader.fieldnames or []
    missing = [c for c in expected if c not in header]
    if missing:
        raise MalformedRow(path, 1, f"missing columns {missing}")


def read_nodes(path) -> list[NodeRecord]:
    path = Path(path)
    nodes = []
    seen = set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, NODE_COLUMNS, path)
        for line, row in enumerate(reader, start=2):
            try:
                node = NodeRecord(int(row["id"]), float(row["lat"]), float(row["lon"]))
            except (TypeError, ValueError) as exc:
                raise MalformedRow(path, line, str(exc)) from None
            if not (-90.0 <= node.lat <= 90.0 and -180.0 <= node.lon <= 180.0):
                raise MalformedRow(path, line, "coordinates out of range")
            if node.id in seen:
                raise MalformedRow(path, line, f"duplicate node id {node.id}")
            seen.add(node.id)
            nodes.append(node)
    return nodes


def read_edges(path) -> list[EdgeRecord]:
    path = Path(path)
    edges = []
    seen = set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, EDGE_COLUMNS, path)
        for line, row in enumerate(reader, start=2):
            try:
                road_type = row["road_type"].strip()
                edge = EdgeRecord(
                    u=int(row["from"]),
                    v=int(row["to"]),
                    key=int(row["key"]),
                    road_type=road_type if road_type in MAJOR_ROAD_TYPES else OTHER,
                    length=float(row["length"]),
                    lanes=_opt_int(row["lanes"] or ""),
                    maxspeed=_opt_float(row["maxspeed"] or ""),
                    geometry=parse_geometry(row["geometry"] or ""),
                )
            except (TypeError, ValueError, AttributeError) as exc:
                raise MalformedRow(path, line, str(exc)) from None
            if not edge.length > 0:
                raise MalformedRow(path, line, "length must be positive")
            if edge.id in seen:
                raise MalformedRow(path, line, f"duplicate edge {edge.id}")
            seen.add(edge.id)
            edges.append(edge)
    return edges


def load_graph(nodes_file, edges_file) -> RoadGraph:
    """Read the node and edge CSV extracts into a :class:`RoadGraph`.

    Unknown road types become ``"other"``; empty ``lanes``/``maxspeed``
    fields stay ``None``. Raises :class:`MalformedRow` for unparseable rows
    and :class:`DanglingEdge` when an edge endpoint is missing.
    """
    nodes = read_nodes(nodes_file)
    edges = read_edges(edges_file)
    g = RoadGraph(nodes, edges)
    bad = geometry_mismatches(g)
    if bad:
        log.warning("%d edges have geometry inconsistent with length (>1%%)", len(bad))
    return g


def geometry_mismatches(g: RoadGraph, rel_tol: float = 0.01) -> list[EdgeKey]:
    """Edges whose polyline length differs from ``length`` by more than ``rel_tol``."""
    bad = []
    for e in g.edges.values():
        if e.geometry and len(e.geometry) >= 2:
            if abs(polyline_length(e.geometry) - e.length) > rel_tol * e.length:
                bad.append(e.id)
    return bad


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_graph(g: RoadGraph, nodes_path, edges_path, extra_edge_columns=None) -> None:
    """Write the graph as node and edge CSVs.

    ``extra_edge_columns`` maps column name to a function of the edge; used to
    append enrichment columns.
    """
    extra = dict(extra_edge_columns or {})
    with Path(nodes_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_COLUMNS)
        for n in g.nodes.values():
            w.writerow([n.id, repr(n.lat), repr(n.lon)])
    with Path(edges_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_COLUMNS + tuple(extra))
        for e in g.edges.values():
            row = [e.u, e.v, e.key, e.road_type, repr(e.length), _fmt(e.lanes),
                   _fmt(e.maxspeed), format_geometry(e.geometry)]
            row += [_fmt(fn(e)) for fn in extra.values()]
            w.writerow(row)


def write_graphml(g: RoadGraph, path) -> None:
    """Export as GraphML, using the CSV column names as attribute keys."""
    root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    node_keys = {"lat": "double", "lon": "double"}
    edge_keys = {
        "key": "int", "road_type": "string", "length": "double",
        "lanes": "int", "maxspeed": "double", "geometry": "string",
    }
    attr_fields = ("lanes_imputed", "free_flow_speed_mps", "capacity_vps", "t0_s", "a0", "a4")
    has_attrs = any(e.attrs is not None for e in g.edges.values())
    if has_attrs:
        edge_keys.update({name: "double" for name in attr_fields})
        edge_keys["lanes_imputed"] = "boolean"
    for name, typ in node_keys.items():
        ET.SubElement(root, "key", {"id": name, "for": "node", "attr.name": name, "attr.type": typ})
    for name, typ in edge_keys.items():
        ET.SubElement(root, "key", {"id": name, "for": "edge", "attr.name": name, "attr.type": typ})
    graph = ET.SubElement(root, "graph", edgedefault="directed")
    for n in g.nodes.values():
        el = ET.SubElement(graph, "node", id=str(n.id))
        ET.SubElement(el, "data", key="lat").text = repr(n.lat)
        ET.SubElement(el, "data", key="lon").text = repr(n.lon)
    for e in g.edges.values():
        el = ET.SubElement(graph, "edge", source=str(e.u), target=str(e.v))
        values = {
            "key": e.key, "road_type": e.road_type, "length": e.length,
            "lanes": e.lanes, "maxspeed": e.maxspeed,
            "geometry": format_geometry(e.geometry) or None,
        }
        if has_attrs and e.attrs is not None:
            a = e.attrs
            values.update(
                lanes_imputed=str(a.lanes_imputed).lower(),
                free_flow_speed_mps=a.free_flow_speed,
                capacity_vps=a.capacity_per_sec,
                t0_s=a.t0, a0=a.a0, a4=a.a4,
            )
        for name, value in values.items():
            if value is not None:
                ET.SubElement(el, "data", key=name).text = _fmt(value)
    ET.indent(root)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


# --------------------------------------------------------------- transforms


def filter_by_road_type(g: RoadGraph, keep=MAJOR_ROAD_TYPES) -> RoadGraph:
    """Keep only edges whose road type is in ``keep``, then drop isolated nodes."""
    keep = frozenset(keep)
    if not keep:
        raise ValueError("keep must be a nonempty set of road types")
    edges = [e for e in g.edges.values() if e.road_type in keep]
    used = {e.u for e in edges} | {e.v for e in edges}
    return RoadGraph((n for n in g.nodes.values() if n.id in used), edges)


def induced_subgraph(g: RoadGraph, node_ids) -> RoadGraph:
    node_ids = set(node_ids)
    nodes = [g.nodes[i] for i in node_ids]
    edges = [e for e in g.edges.values() if e.u in node_ids and e.v in node_ids]
    return RoadGraph(nodes, edges)


def largest_scc(g: RoadGraph) -> RoadGraph:
    """Induced subgraph on the largest strongly connected component.

    Ties between equally large components go to the one containing the
    smallest node id.
    """
    if g.n_nodes == 0:
        raise EmptyGraph("cannot take the strongly connected component of an empty graph")
    ids = np.fromiter(g.nodes.keys(), dtype=np.int64, count=g.n_nodes)
    index = {nid: i for i, nid in enumerate(ids.tolist())}
    rows = [index[e.u] for e in g.edges.values()]
    cols = [index[e.v] for e in g.edges.values()]
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(g.n_nodes, g.n_nodes))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=n_comp)
    # ids are sorted, so the first index of each label holds its minimum id
    first = np.full(n_comp, g.n_nodes)
    np.minimum.at(first, labels, np.arange(g.n_nodes))
    best = min(range(n_comp), key=lambda c: (-sizes[c], first[c]))
    return induced_subgraph(g, ids[labels == best].tolist())


def _is_interstitial(g: RoadGraph, node: int) -> bool:
    ins = g.in_edges(node)
    outs = g.out_edges(node)
    if any(e.u == e.v for e in ins):
        return False
    in_nbrs = {e.u for e in ins}
    out_nbrs = {e.v for e in outs}
    if len(ins) == 1 and len(outs) == 1:
        return ins[0].u != outs[0].v
    if len(ins) == 2 and len(outs) == 2:
        return len(in_nbrs) == 2 and in_nbrs == out_nbrs
    return False


def _next_edge(g: RoadGraph, node: int, came_from: int) -> EdgeRecord:
    outs = g.out_edges(node)
    if len(outs) == 1:
        return outs[0]
    return outs[0] if outs[0].v != came_from else outs[1]


def _merge_chain(g: RoadGraph, chain: list[EdgeRecord], key: int) -> EdgeRecord:
    length = math.fsum(e.length for e in chain)
    counts = Counter(e.road_type for e in chain)
    top = max(counts.values())
    modal = {t for t, c in counts.items() if c == top}
    longest = max((e for e in chain if e.road_type in modal), key=lambda e: e.length)
    lanes = [e.lanes for e in chain if e.lanes is not None]
    speeds = [e.maxspeed for e in chain if e.maxspeed is not None]
    points: list = []
    for e in chain:
        pts = e.geometry or (
            (g.nodes[e.u].lat, g.nodes[e.u].lon),
            (g.nodes[e.v].lat, g.nodes[e.v].lon),
        )
        if points and points[-1] == pts[0]:
            pts = pts[1:]
        points.extend(pts)
    return EdgeRecord(
        u=chain[0].u,
        v=chain[-1].v,
        key=key,
        road_type=longest.road_type,
        length=length,
        lanes=min(lanes) if lanes else None,
        maxspeed=min(speeds) if speeds else None,
        geometry=tuple(points),
    )


def _walk(g, first, interstitial, visited):
    chain = [first]
    visited.add(first.id)
    prev, node = first.u, first.v
    while node in interstitial and node != first.u:
        e = _next_edge(g, node, prev)
        chain.append(e)
        visited.add(e.id)
        prev, node = node, e.v
    return chain


def simplify_topology(g: RoadGraph) -> RoadGraph:
    """Contract every maximal chain of interstitial nodes into one edge.

    A node is interstitial when it is a pure pass-through: one in-edge and
    one out-edge to distinct neighbors, or the two-way version with exactly
    two in- and two out-edges shared with the same two neighbors. Nodes with
    self-loops are never interstitial. Rings made only of interstitial nodes
    are anchored at their smallest node id and become self-loops.

    Contraction can turn a retained two-way node into a pass-through, so
    passes repeat until nothing changes. Merged edges are always rebuilt from
    the original constituent edges.
    """
    parts = {e.id: [e] for e in g.edges.values()}
    cur = g
    while True:
        interstitial = {n for n in cur.nodes if _is_interstitial(cur, n)}
        if not interstitial:
            return cur
        cur, parts = _simplify_pass(g, cur, interstitial, parts)


def _simplify_pass(orig: RoadGraph, g: RoadGraph, interstitial: set, parts: dict):
    chains = []
    visited: set = set()
    for node in g.nodes:
        if node in interstitial:
            continue
        for e in g.out_edges(node):
            if e.id not in visited:
                chains.append(_walk(g, e, interstitial, visited))
    # whatever remains lies on rings with no retained node
    for node in sorted(interstitial):
        for e in g.out_edges(node):
            if e.id not in visited:
                interstitial.discard(node)
                chains.append(_walk(g, e, interstitial, visited))
    kept_nodes = set(g.nodes) - interstitial
    # single-edge chains keep their key; merged chains take the lowest free key
    used_keys: dict = defaultdict(set)
    for chain in chains:
        if len(chain) == 1:
            used_keys[(chain[0].u, chain[0].v)].add(chain[0].key)
    edges = []
    new_parts = {}
    for chain in sorted(chains, key=lambda c: (c[0].u, c[-1].v, c[0].key, c[0].v)):
        if len(chain) == 1:
            edges.append(chain[0])
            new_parts[chain[0].id] = parts[chain[0].id]
            continue
        taken = used_keys[(chain[0].u, chain[-1].v)]
        key = 0
        while key in taken:
            key += 1
        taken.add(key)
        originals = [o for e in chain for o in parts[e.id]]
        merged = _merge_chain(orig, originals, key)
        edges.append(merged)
        new_parts[merged.id] = originals
    return RoadGraph((g.nodes[n] for n in kept_nodes), edges), new_parts
