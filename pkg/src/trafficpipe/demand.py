"""Zone-to-zone demand to node-to-node demand via nearest-node matching."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyGraph, MalformedRow, UnknownZone
from .geo import EARTH_RADIUS_M, haversine
from .graph import RoadGraph

log = logging.getLogger(__name__)

__all__ = [
    "Zone", "TripRecord", "NodeDemand", "LinkedDemand", "haversine",
    "nearest_node", "link_demand", "read_zones", "read_trips",
    "read_node_demand", "write_node_demand",
]


@dataclass(frozen=True)
class Zone:
    zone_id: int
    centroid_lat: float
    centroid_lon: float


@dataclass(frozen=True)
class TripRecord:
    origin_zone: int
    dest_zone: int
    trips: float
    departure_bucket: int | None = None


@dataclass(frozen=True)
class NodeDemand:
    origin_node: int
    dest_node: int
    trips: float
    departure_bucket: int | None = None


@dataclass
class LinkedDemand:
    records: list[NodeDemand] = field(default_factory=list)
    dropped_records: int = 0
    dropped_trips: float = 0.0

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


class _NodeCoords:
    def __init__(self, g: RoadGraph):
        if g.n_nodes == 0:
            raise EmptyGraph("cannot match against a graph without nodes")
        self.ids = np.fromiter(g.nodes.keys(), dtype=np.int64, count=g.n_nodes)
        self.lat = np.array([n.lat for n in g.nodes.values()])
        self.lon = np.array([n.lon for n in g.nodes.values()])

    def nearest(self, lat, lon, r=EARTH_RADIUS_M) -> int:
        d = haversine(lat, lon, self.lat, self.lon, r)
        return int(self.ids[np.argmin(d)])  # ids ascending, argmin takes the first


def nearest_node(zone: Zone, g: RoadGraph) -> int:
    """Id of the node closest to the zone centroid (ties -> smallest id)."""
    return _NodeCoords(g).nearest(zone.centroid_lat, zone.centroid_lon)


def link_demand(trips, zones, g: RoadGraph, workers: int = 1) -> LinkedDemand:
    """Rewrite zone OD records onto their nearest network nodes.

    Records that land on the same ``(origin, dest, bucket)`` are summed.
    Records whose origin and destination fall on the same node are dropped
    and counted.
    """
    zone_map = {z.zone_id: z for z in zones}
    needed = sorted({t.origin_zone for t in trips} | {t.dest_zone for t in trips})
    for zid in needed:
        if zid not in zone_map:
            raise UnknownZone(zid)
    coords = _NodeCoords(g)

    def match(zid):
        z = zone_map[zid]
        return coords.nearest(z.centroid_lat, z.centroid_lon)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            zone_node = dict(zip(needed, pool.map(match, needed)))
    else:
        zone_node = {zid: match(zid) for zid in needed}

    totals: dict = {}
    out = LinkedDemand()
    for t in trips:
        o, d = zone_node[t.origin_zone], zone_node[t.dest_zone]
        if o == d:
            out.dropped_records += 1
            out.dropped_trips += t.trips
            continue
        key = (o, d, t.departure_bucket)
        totals[key] = totals.get(key, 0.0) + t.trips
    if out.dropped_records:
        log.warning("dropped %d OD records (%.6g trips) collapsing onto a single node",
                    out.dropped_records, out.dropped_trips)
    for (o, d, b) in sorted(totals, key=lambda k: (k[0], k[1], -1 if k[2] is None else k[2])):
        out.records.append(NodeDemand(o, d, totals[(o, d, b)], b))
    return out


# --------------------------------------------------------------------- I/O


def _rows(path, required):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise MalformedRow(path, 1, f"missing columns {missing}")
        for line, row in enumerate(reader, start=2):
            yield line, row


def _bucket(value):
    value = (value or "").strip()
    return int(value) if value else None


def read_zones(path) -> list[Zone]:
    zones, seen = [], set()
    for line, row in _rows(path, ("zone_id", "centroid_lat", "centroid_lon")):
        try:
            z = Zone(int(row["zone_id"]), float(row["centroid_lat"]), float(row["centroid_lon"]))
        except (TypeError, ValueError) as exc:
            raise MalformedRow(path, line, str(exc)) from None
        if z.zone_id in seen or not (-90 <= z.centroid_lat <= 90 and -180 <= z.centroid_lon <= 180):
            raise MalformedRow(path, line, "duplicate zone id or coordinates out of range")
        seen.add(z.zone_id)
        zones.append(z)
    return zones


def read_trips(path) -> list[TripRecord]:
    out = []
    for line, row in _rows(path, ("origin_zone", "dest_zone", "trips")):
        try:
            t = TripRecord(int(row["origin_zone"]), int(row["dest_zone"]), float(row["trips"]),
                           _bucket(row.get("departure_bucket")))
        except (TypeError, ValueError) as exc:
            raise MalformedRow(path, line, str(exc)) from None
        if not t.trips > 0:
            raise MalformedRow(path, line, "trips must be positive")
        out.append(t)
    return out


def read_node_demand(path) -> list[NodeDemand]:
    out = []
    for line, row in _rows(path, ("origin_node", "dest_node", "trips")):
        try:
            r = NodeDemand(int(row["origin_node"]), int(row["dest_node"]), float(row["trips"]),
                           _bucket(row.get("departure_bucket")))
        except (TypeError, ValueError) as exc:
            raise MalformedRow(path, line, str(exc)) from None
        if not r.trips > 0:
            raise MalformedRow(path, line, "trips must be positive")
        out.append(r)
    return out


def write_node_demand(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_node", "dest_node", "trips", "departure_bucket"])
        for r in records:
            w.writerow([r.origin_node, r.dest_node, repr(float(r.trips)),
                        "" if r.departure_bucket is None else r.departure_bucket])
