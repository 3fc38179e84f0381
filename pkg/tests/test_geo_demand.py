import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_graph
from oracles import great_circle_arc, law_of_cosines, nearest_exhaustive
from trafficpipe.demand import (
    NodeDemand,
    TripRecord,
    Zone,
    link_demand,
    nearest_node,
    read_node_demand,
    read_trips,
    read_zones,
    write_node_demand,
)
from trafficpipe.errors import EmptyGraph, MalformedRow, UnknownZone
from trafficpipe.geo import EARTH_RADIUS_M, bearing, haversine, polyline_length
from trafficpipe.graph import NodeRecord, RoadGraph

lat_st = st.floats(-89.9, 89.9)
lon_st = st.floats(-179.9, 179.9)


def test_identical_points_zero():
    assert haversine(37.5, -122.1, 37.5, -122.1) == 0.0


def test_equatorial_radian_arc():
    d = haversine(0.0, 0.0, 0.0, math.degrees(1.0))
    assert d == pytest.approx(EARTH_RADIUS_M, rel=1e-9)


def test_antipodal():
    assert haversine(0.0, 0.0, 0.0, 180.0) == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-9)
    assert haversine(90.0, 0.0, -90.0, 0.0) == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-9)
    # off the analytic cases, acos near -1 amplifies rounding to about sqrt(eps)
    assert haversine(10.0, 20.0, -10.0, -160.0) == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-7)


def test_vectorized_and_scalar_types():
    d = haversine(0.0, 0.0, np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert d.shape == (2,)
    assert isinstance(haversine(0, 0, 1, 1), float)


def test_polyline_and_bearing():
    pts = [(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)]
    assert polyline_length(pts) == pytest.approx(haversine(0, 0, 0, 2), rel=1e-12)
    assert polyline_length(pts[:1]) == 0.0
    assert bearing(0, 0, 0, 1) == pytest.approx(90.0)
    assert bearing(0, 0, 1, 0) == pytest.approx(0.0)
    assert bearing(0, 0, 0, -1) == pytest.approx(270.0)


@settings(max_examples=200, deadline=None)
@given(lat_st, lon_st, lat_st, lon_st)
def test_matches_vector_arc_and_is_symmetric(a, b, c, d):
    h = haversine(a, b, c, d)
    assert h == haversine(c, d, a, b)
    # law of cosines loses precision for very short arcs; compare with an absolute floor
    assert h == pytest.approx(great_circle_arc(a, b, c, d), rel=1e-6, abs=1.0)


@settings(max_examples=200, deadline=None)
@given(lat_st, lon_st, lat_st, lon_st, lat_st, lon_st)
def test_triangle_inequality(a, b, c, d, e, f):
    ab, bc, ac = haversine(a, b, c, d), haversine(c, d, e, f), haversine(a, b, e, f)
    assert ac <= (ab + bc) * (1 + 1e-6) + 1.0


# ---------------------------------------------------------------- nearest node


def test_coincident_centroid():
    g = make_graph({1: (37.0, -122.0), 2: (37.1, -122.0)}, [(1, 2, 100.0)])
    assert nearest_node(Zone(0, 37.1, -122.0), g) == 2


def test_equidistant_tie_goes_to_smaller_id():
    g = make_graph({9: (0.0, 0.01), 7: (0.0, -0.01)}, [(7, 9, 2000.0)])
    assert nearest_node(Zone(0, 0.0, 0.0), g) == 7


def test_empty_graph():
    with pytest.raises(EmptyGraph):
        nearest_node(Zone(0, 0.0, 0.0), RoadGraph([], []))


@pytest.mark.parametrize("seed", range(20))
def test_nearest_matches_exhaustive_scan(seed):
    rng = np.random.default_rng(seed)
    nodes = [(int(i), float(37 + rng.uniform(0, 0.2)), float(-122 + rng.uniform(0, 0.2)))
             for i in rng.choice(10_000, 50, replace=False)]
    g = RoadGraph([NodeRecord(*n) for n in nodes], [])
    for _ in range(10):
        lat, lon = 37 + rng.uniform(-0.05, 0.25), -122 + rng.uniform(-0.05, 0.25)
        got = nearest_node(Zone(0, lat, lon), g)
        assert got == nearest_exhaustive(lat, lon, nodes)
        best = law_of_cosines(lat, lon, g.nodes[got].lat, g.nodes[got].lon)
        assert all(best <= law_of_cosines(lat, lon, n[1], n[2]) for n in nodes)


# ---------------------------------------------------------------- link demand


@pytest.fixture
def linked_graph():
    return make_graph({1: (0.0, 0.0), 2: (0.0, 0.01), 3: (0.0, 0.02)}, [(1, 2, 1100.0), (2, 3, 1100.0)])


def test_two_zones_distinct_nodes(linked_graph):
    zones = [Zone(10, 0.0, 0.0001), Zone(20, 0.0, 0.0201)]
    out = link_demand([TripRecord(10, 20, 100.0)], zones, linked_graph)
    assert out.records == [NodeDemand(1, 3, 100.0, None)]
    assert out.dropped_records == 0


def test_collapsing_pairs_are_summed(linked_graph):
    zones = [Zone(10, 0.0, 0.0), Zone(11, 0.0, 0.0002), Zone(20, 0.0, 0.02), Zone(21, 0.0, 0.0199)]
    trips = [TripRecord(10, 20, 30.0), TripRecord(11, 21, 70.0)]
    out = link_demand(trips, zones, linked_graph)
    assert out.records == [NodeDemand(1, 3, 100.0, None)]


def test_buckets_kept_apart(linked_graph):
    zones = [Zone(10, 0.0, 0.0), Zone(20, 0.0, 0.02)]
    trips = [TripRecord(10, 20, 1.0, 0), TripRecord(10, 20, 2.0, 1), TripRecord(10, 20, 3.0, 0)]
    out = link_demand(trips, zones, linked_graph)
    assert [(r.departure_bucket, r.trips) for r in out.records] == [(0, 4.0), (1, 2.0)]


def test_same_node_dropped_with_warning(linked_graph, caplog):
    zones = [Zone(10, 0.0, 0.0), Zone(11, 0.0, 0.0001), Zone(20, 0.0, 0.02)]
    with caplog.at_level(logging.WARNING):
        out = link_demand([TripRecord(10, 11, 5.0), TripRecord(10, 20, 1.0)], zones, linked_graph)
    assert out.dropped_records == 1 and out.dropped_trips == 5.0
    assert len(out.records) == 1
    assert "dropped 1" in caplog.text


def test_unknown_zone(linked_graph):
    with pytest.raises(UnknownZone):
        link_demand([TripRecord(10, 99, 1.0)], [Zone(10, 0.0, 0.0)], linked_graph)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.floats(0.1, 100.0)), min_size=1, max_size=30),
       st.integers(1, 3))
def test_trip_conservation_and_worker_independence(raw, workers):
    rng = np.random.default_rng(len(raw))
    g = make_graph({i: (0.0, 0.003 * i) for i in range(5)}, [(i, i + 1, 330.0) for i in range(4)])
    zones = [Zone(z, 0.0, float(rng.uniform(0, 0.012))) for z in range(8)]
    trips = [TripRecord(o, d, t) for o, d, t in raw]
    out = link_demand(trips, zones, g, workers=workers)
    assert math.isclose(sum(r.trips for r in out.records) + out.dropped_trips,
                        sum(t.trips for t in trips), rel_tol=1e-12)
    keys = [(r.origin_node, r.dest_node, r.departure_bucket) for r in out.records]
    assert len(keys) == len(set(keys))
    assert out.records == link_demand(trips, zones, g, workers=1).records


# ------------------------------------------------------------------------ I/O


def test_csv_roundtrip(tmp_path):
    recs = [NodeDemand(1, 2, 0.25, None), NodeDemand(2, 1, 3.0, 4)]
    path = tmp_path / "d.csv"
    write_node_demand(recs, path)
    assert read_node_demand(path) == recs


def test_readers_reject_bad_rows(tmp_path):
    p = tmp_path / "zones.csv"
    p.write_text("zone_id,centroid_lat,centroid_lon\n1,0,0\n1,1,1\n")
    with pytest.raises(MalformedRow) as err:
        read_zones(p)
    assert err.value.line == 3
    p.write_text("zone_id,centroid_lat,centroid_lon\n1,95,0\n")
    with pytest.raises(MalformedRow):
        read_zones(p)
    t = tmp_path / "trips.csv"
    t.write_text("origin_zone,dest_zone,trips\n1,2,0\n")
    with pytest.raises(MalformedRow):
        read_trips(t)
    t.write_text("origin_zone,dest_zone\n1,2\n")
    with pytest.raises(MalformedRow):
        read_trips(t)
    t.write_text("origin_zone,dest_zone,trips,departure_bucket\n1,2,5,3\n1,3,2,\n")
    assert [r.departure_bucket for r in read_trips(t)] == [3, None]
