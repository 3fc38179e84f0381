"""Discrete-time vehicle simulation over a traffic atlas.

Each step has three phases:

1. vehicles whose departure time has passed are inserted at the start of
   their first edge (sequential, in departure order);
2. every active vehicle plans its lane change and acceleration reading only
   the current atlas and vehicle states (this phase may run on a thread
   pool);
3. plans are committed in vehicle-id order into a fresh atlas. When two
   vehicles claim the same cells, the lower id keeps them and the other one
   brakes to the gap that is left.

Lane 0 is the rightmost lane. Positions are front-bumper distances from the
start of the current edge.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import AtlasOverflow
from ..geo import bearing
from .atlas import EMPTY, AtlasLayout, TrafficAtlas, body_cells
from .control import IntersectionControl
from .vehicles import CAR, MPS_TO_MPH, TRUCK, VehicleParams, co_emission_rate, fuel_rate, idm_acceleration

INF = math.inf
ENTRY_HORIZON_CELLS = 200
TURN_ANGLE_DEG = 45.0


@dataclass
class SimConfig:
    dt: float = 0.5
    lc_scale_m: float = 300.0  # distance scale of the mandatory lane-change ramp
    lc_gain_m: float = 10.0  # leader-gap advantage that triggers a discretionary change
    phase_duration: float = 10.0
    truck_share: float = 0.1
    car: VehicleParams = CAR
    truck: VehicleParams = TRUCK
    max_time: float | None = None  # default: last departure + 3 h
    stop_line_tol_m: float = 1.0
    sample_interval: float = 60.0
    samples_per_group: int = 6
    avg_vehicle_length: float = 5.0
    workers: int = 1
    check_atlas: bool = False

    def __post_init__(self):
        if not self.dt > 0 or not self.lc_scale_m > 0 or not self.phase_duration > 0:
            raise ValueError("dt, lc_scale_m and phase_duration must be positive")
        if not 0.0 <= self.truck_share <= 1.0:
            raise ValueError("truck_share must be in [0, 1]")
        steps = self.sample_interval / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("sample_interval must be a multiple of dt")


@dataclass
class Plan:
    lane: int
    accel: float
    v: float
    pos: float
    may_pass: bool
    mode: str


@dataclass
class StepCounters:
    departed: int = 0
    arrived: int = 0

    @property
    def active(self) -> int:
        return self.departed - self.arrived


class RoadNetwork:
    """Per-edge physical attributes needed by the simulation."""

    def __init__(self, g):
        from ..network import NetworkArrays

        net = g.arrays if hasattr(g, "arrays") else g
        if not isinstance(net, NetworkArrays):
            raise TypeError("expected a RoadGraph")
        self.net = net
        edges = list(g.edges.values())
        if any(e.attrs is None for e in edges):
            raise ValueError("graph edges need speed attributes; run compute_bpr_coefficients")
        self.length = np.array([e.length for e in edges])
        self.lanes = np.array([e.attrs.lanes for e in edges], dtype=np.int64)
        self.speed = np.array([e.attrs.free_flow_speed for e in edges])
        self.edge_keys = list(g.edges)
        lat = np.array([n.lat for n in g.nodes.values()])
        lon = np.array([n.lon for n in g.nodes.values()])
        self.bearing = np.array([
            bearing(lat[t], lon[t], lat[h], lon[h]) for t, h in zip(net.tail, net.head)
        ])
        self._turn_cache: dict = {}

    def turn_lanes(self, e: int, nxt: int | None) -> tuple[int, int]:
        """Inclusive lane range on ``e`` from which ``nxt`` can be entered."""
        n = int(self.lanes[e])
        if nxt is None or n == 1:
            return 0, n - 1
        key = (e, nxt)
        hit = self._turn_cache.get(key)
        if hit is None:
            angle = (self.bearing[nxt] - self.bearing[e] + 180.0) % 360.0 - 180.0
            if angle > TURN_ANGLE_DEG:
                hit = (0, 0)  # right turn from the rightmost lane
            elif angle < -TURN_ANGLE_DEG:
                hit = (n - 1, n - 1)
            else:
                hit = (0, n - 1)
            self._turn_cache[key] = hit
        return hit


def lane_change_probability(dist_to_exit: float, scale: float, exit_pos: float = 0.0) -> float:
    """Per-step chance of switching to mandatory lane-change behavior."""
    return math.exp(-(((dist_to_exit - exit_pos) / scale) ** 2))


class World:
    """Simulation state for one run over a fixed set of routed vehicles."""

    def __init__(self, road: RoadNetwork, vehicles, control: IntersectionControl,
                 cfg: SimConfig, rngs):
        self.road = road
        self.cfg = cfg
        self.vehicles = vehicles
        self.control = control
        self.rngs = rngs
        self.layout = AtlasLayout(road.length, road.lanes)
        self.atlas = TrafficAtlas(self.layout)
        self.next_atlas = TrafficAtlas(self.layout)
        self.t = 0.0
        self.step_count = 0
        self.counters = StepCounters()
        self.committed = np.zeros(len(vehicles), dtype=bool)
        self._pending = sorted(range(len(vehicles)), key=lambda i: (vehicles[i].departure, i))
        self._next_pending = 0
        self._waiting: list = []
        self.active_ids: list = []
        n_e = len(road.length)
        self.edge_time_sum = np.zeros(n_e)
        self.edge_time_count = np.zeros(n_e, dtype=np.int64)
        self.samples: list = []  # (t, count per edge, speed sum per edge)
        self.conservation: list = []  # (t, departed, arrived, active)
        self._pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
        for veh in vehicles:
            if not veh.route:
                raise ValueError(f"vehicle {veh.id} has no route")
            first = veh.route[0]
            if self.layout.n_cells[first] < veh.params.n_cells:
                raise AtlasOverflow(
                    f"edge {road.edge_keys[first]} is too short to inject vehicle {veh.id}")

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # ----------------------------------------------------------- queries

    def _v0(self, veh, e) -> float:
        return self.road.speed[e] * veh.params.speed_factor

    def leader_in_lane(self, veh, e, lane):
        """``(gap, leader_speed)`` to the nearest vehicle ahead on ``e``."""
        _, c1 = body_cells(veh.pos, veh.params.length)
        lid = self.atlas.first_occupant(e, lane, max(c1, 0), skip=veh.id)
        if lid == EMPTY:
            return INF, 0.0
        lead = self.vehicles[lid]
        return lead.rear - veh.pos, lead.v

    def entry_lane(self, e: int, atlas=None, view=None) -> tuple[int, float]:
        """Lane of ``e`` with the most free space at its start, and that space."""
        best_lane, best_room = 0, -INF
        horizon = min(ENTRY_HORIZON_CELLS, int(self.layout.n_cells[e]))
        for lane in range(int(self.road.lanes[e])):
            if view is None:
                lid = self.atlas.first_occupant(e, lane, 0, horizon)
                room = INF if lid == EMPTY else self.vehicles[lid].rear
            else:
                room = view(e, lane, 0, horizon)
            if room > best_room:
                best_lane, best_room = lane, room
        return best_lane, best_room

    def gap_acceptance(self, veh, target_lane: int) -> bool:
        """Lead gap >= s0 + T v and lag gap >= the follower's s0 + T v."""
        e = veh.edge
        p = veh.params
        c0, c1 = body_cells(veh.pos, p.length)
        if self.atlas.occupants(e, target_lane, c0, c1) - {veh.id}:
            return False
        lid = self.atlas.first_occupant(e, target_lane, max(c1, 0), skip=veh.id)
        if lid != EMPTY:
            lead = self.vehicles[lid]
            if lead.rear - veh.pos < p.s0 + p.T * veh.v:
                return False
        fid = self.atlas.last_occupant(e, target_lane, 0, c0, skip=veh.id)
        if fid != EMPTY:
            fol = self.vehicles[fid]
            if veh.rear - fol.pos < fol.params.s0 + fol.params.T * fol.v:
                return False
        return True

    def lane_change_decision(self, veh, dist_to_exit: float, rng, allowed=None):
        """Return ``(decision, mode)`` with decision in stay/left/right."""
        e = veh.edge
        n = int(self.road.lanes[e])
        mode = veh.lc_mode
        if n == 1:
            return "stay", mode
        lo, hi = allowed if allowed is not None else (0, n - 1)
        lane = veh.lane
        if not lo <= lane <= hi:
            if mode == "discretionary":
                if rng.random() < lane_change_probability(dist_to_exit, self.cfg.lc_scale_m):
                    mode = "mandatory"
            if mode == "mandatory":
                target = lane + 1 if lane < lo else lane - 1
                if self.gap_acceptance(veh, target):
                    return ("left" if target > lane else "right"), mode
                return "stay", mode
        else:
            mode = "discretionary"
        in_range = lo <= lane <= hi
        own_gap, _ = self.leader_in_lane(veh, e, lane)
        best, best_gap = "stay", own_gap + self.cfg.lc_gain_m
        # right is tried first and only a strictly larger gap displaces it
        for target, label in ((lane - 1, "right"), (lane + 1, "left")):
            if not 0 <= target < n or (in_range and not lo <= target <= hi):
                continue
            gap, _ = self.leader_in_lane(veh, e, target)
            if (gap >= best_gap if best == "stay" else gap > best_gap) and self.gap_acceptance(veh, target):
                best, best_gap = label, gap
        return best, mode

    # ------------------------------------------------------------ phase 2

    def plan(self, vid: int) -> Plan:
        veh = self.vehicles[vid]
        p = veh.params
        e = veh.edge
        L = self.road.length[e]
        last = veh.route_index == len(veh.route) - 1
        nxt = None if last else veh.route[veh.route_index + 1]
        allowed = self.road.turn_lanes(e, nxt)
        decision, mode = self.lane_change_decision(veh, L - veh.pos, self.rngs[vid], allowed)
        lane = veh.lane + {"stay": 0, "left": 1, "right": -1}[decision]

        gap, lead_v = self.leader_in_lane(veh, e, lane)
        may_pass = True
        if gap == INF and not last:
            node = int(self.road.net.head[e])
            may_pass = allowed[0] <= lane <= allowed[1] and self.control.may_enter(
                node, e, nxt, vid, self.t)
            if may_pass:
                entry, room = self.entry_lane(nxt)
                if room != INF:
                    gap, lead_v = (L - veh.pos) + room, self.vehicles[
                        self.atlas.first_occupant(nxt, entry, 0, ENTRY_HORIZON_CELLS)].v
            else:
                stop_gap = L - veh.pos
                # a signal turning red inside the braking distance is run through
                if (self.control.kind_of(node) == "signal" and allowed[0] <= lane <= allowed[1]
                        and stop_gap < veh.v * veh.v / (2.0 * p.b_comf) and stop_gap > 0):
                    may_pass = True
                else:
                    gap, lead_v = stop_gap + p.s0, 0.0
        if gap <= 0.0:
            gap = 1e-6
        accel = idm_acceleration(veh.v, self._v0(veh, e), gap, veh.v - lead_v, p)
        v_new = max(0.0, veh.v + accel * self.cfg.dt)
        return Plan(lane, accel, v_new, veh.pos + v_new * self.cfg.dt, may_pass, mode)

    # ------------------------------------------------------------ phase 3

    def _blockers(self, e: int, lane: int, c0: int, c1: int, vid: int):
        """Vehicles holding cells of ``[c0, c1)`` in the next atlas, or in the
        current atlas when they have not been committed yet."""
        found = self.next_atlas.occupants(e, lane, c0, c1)
        for other in self.atlas.occupants(e, lane, c0, c1):
            if other != vid and not self.committed[other]:
                found.add(other)
        found.discard(vid)
        return found

    def _front_limit(self, e, lane, c0, c1, veh) -> float:
        """Furthest front position on ``e`` that stays clear of blockers."""
        limit = INF
        n_cells = veh.params.n_cells
        for b in self._blockers(e, lane, c0, c1, veh.id):
            rear = self.vehicles[b].rear
            limit = min(limit, rear, math.floor(rear) - n_cells + veh.params.length)
        return limit

    def _room_view(self, vid):
        def view(e, lane, c0, c1):
            best = INF
            for b in self._blockers(e, lane, c0, c1, vid):
                best = min(best, self.vehicles[b].rear)
            return best
        return view

    def _leave_edge(self, veh, t_exit):
        e = veh.edge
        self.edge_time_sum[e] += t_exit - veh.edge_entry_time
        self.edge_time_count[e] += 1

    def commit(self, vid: int, plan: Plan):
        veh = self.vehicles[vid]
        p = veh.params
        dt = self.cfg.dt
        e = veh.edge
        L = self.road.length[e]
        last = veh.route_index == len(veh.route) - 1
        old_pos, old_v = veh.pos, veh.v
        t_next = self.t + dt

        lane = plan.lane
        c0_old, c1_old = body_cells(old_pos, p.length)
        if lane != veh.lane and self._blockers(e, lane, c0_old, c1_old + 1, vid):
            lane = veh.lane
        veh.lane = lane
        veh.lc_mode = plan.mode

        target = plan.pos
        _, c1_new = body_cells(min(target, L), p.length)
        target = min(target, self._front_limit(e, lane, max(c0_old, 0), c1_new + 1, veh))
        new_edge = None
        if target > L and not last:
            if plan.may_pass:
                nxt = veh.route[veh.route_index + 1]
                entry, _ = self.entry_lane(nxt, view=self._room_view(vid))
                front2 = target - L
                _, c1_2 = body_cells(front2, p.length)
                limit2 = self._front_limit(nxt, entry, 0, c1_2 + 1, veh)
                target = min(target, L + limit2)
                if target > L:
                    new_edge = (nxt, entry)
            if new_edge is None:
                target = min(target, L)
        target = max(target, old_pos)

        progress = target - old_pos
        v_final = plan.v if target == plan.pos else progress / dt
        accel = (v_final - old_v) / dt
        veh.v = v_final
        veh.accel = accel
        # the trip ends at the destination node; overshoot is not travelled
        veh.cum_distance += min(target, L) - old_pos if last else progress
        veh.cum_fuel += fuel_rate(v_final, accel) * dt
        veh.cum_co += co_emission_rate(v_final * MPS_TO_MPH) * dt
        self.committed[vid] = True

        if last and target >= L:
            self._leave_edge(veh, t_next)
            veh.pos = L
            veh.active = False
            veh.arrived = True
            veh.travel_time = t_next - veh.departure
            veh.edges_traversed += 1
            self.counters.arrived += 1
            node = int(self.road.net.head[e])
            if self.control.kind_of(node) == "stop":
                self.control.release(node, vid)
            self._release_previous(veh)
            return
        if new_edge is not None:
            self._leave_edge(veh, t_next)
            node = int(self.road.net.head[e])
            veh.route_index += 1
            veh.edges_traversed += 1
            veh.lane = new_edge[1]
            veh.pos = target - L
            veh.edge_entry_time = t_next
            veh.lc_mode = "discretionary"
            if veh.holding_stop is not None:
                self.control.release(veh.holding_stop, vid)
                veh.holding_stop = None
            if self.control.kind_of(node) == "stop":
                veh.holding_stop = node
        else:
            veh.pos = target
        self._release_previous(veh)
        self.next_atlas.write(veh.edge, veh.lane, veh.pos, p.length, vid)

        if new_edge is None and not last:
            node = int(self.road.net.head[e])
            if (self.control.kind_of(node) == "stop" and L - veh.pos < self.cfg.stop_line_tol_m
                    and self.road.turn_lanes(e, veh.route[veh.route_index + 1])[0] <= veh.lane
                    <= self.road.turn_lanes(e, veh.route[veh.route_index + 1])[1]):
                self.control.request(node, vid, e, veh.route[veh.route_index + 1])

    def _release_previous(self, veh):
        node = veh.holding_stop
        if node is None:
            return
        if not veh.active or veh.rear >= 0.0:
            self.control.release(node, veh.id)
            veh.holding_stop = None

    # ------------------------------------------------------------ phase 1

    def _insert_pending(self):
        while (self._next_pending < len(self._pending)
               and self.vehicles[self._pending[self._next_pending]].departure <= self.t):
            self._waiting.append(self._pending[self._next_pending])
            self._next_pending += 1
        still_waiting = []
        for vid in self._waiting:
            veh = self.vehicles[vid]
            e = veh.route[0]
            p = veh.params
            lane, room = self.entry_lane(e)
            if room >= p.length + p.s0:
                veh.lane = lane
                veh.pos = p.length
                veh.v = 0.0
                veh.active = True
                veh.edge_entry_time = self.t
                self.atlas.write(e, lane, veh.pos, p.length, vid)
                self.counters.departed += 1
                self.active_ids.append(vid)
            else:
                still_waiting.append(vid)
        self._waiting = still_waiting
        self.active_ids.sort()

    # --------------------------------------------------------------- step

    def step(self):
        """Advance the world by one time step."""
        self._insert_pending()
        ids = self.active_ids
        if self._pool is not None and len(ids) > 1:
            n_chunks = self.cfg.workers
            size = -(-len(ids) // n_chunks)
            chunks = [ids[i:i + size] for i in range(0, len(ids), size)]
            plans = [p for part in self._pool.map(lambda c: [self.plan(v) for v in c], chunks)
                     for p in part]
        else:
            plans = [self.plan(v) for v in ids]

        self.next_atlas.clear()
        self.committed[:] = False
        for vid, plan in zip(ids, plans):
            self.commit(vid, plan)
        self.control.grant()
        self.atlas, self.next_atlas = self.next_atlas, self.atlas
        self.active_ids = [v for v in ids if self.vehicles[v].active]
        self.step_count += 1
        self.t = self.step_count * self.cfg.dt
        if self.cfg.check_atlas:
            self.atlas.check_consistency(self.vehicles)
        steps_per_sample = round(self.cfg.sample_interval / self.cfg.dt)
        if self.step_count % steps_per_sample == 0:
            self.sample()

    @property
    def done(self) -> bool:
        return (self.counters.arrived == len(self.vehicles))

    def sample(self):
        """Per-edge vehicle count and speed sum at the current time."""
        n_e = len(self.road.length)
        count = np.zeros(n_e, dtype=np.int64)
        speed = np.zeros(n_e)
        for vid in self.active_ids:
            veh = self.vehicles[vid]
            count[veh.edge] += 1
            speed[veh.edge] += veh.v
        self.samples.append((self.t, count, speed))
        c = self.counters
        self.conservation.append((self.t, c.departed, c.arrived, len(self.active_ids)))

    def run(self, max_time: float):
        try:
            while not self.done and self.t < max_time:
                self.step()
        finally:
            self.close()
        for vid in self.active_ids:
            veh = self.vehicles[vid]
            veh.travel_time = self.t - veh.departure


@dataclass
class UtilizationSample:
    t: float
    utilization: np.ndarray
    mean_speed: np.ndarray  # NaN where the edge is empty


def sample_metrics(world: World, t: float | None = None) -> UtilizationSample:
    """Utilization (vehicles / max vehicles) and mean speed per edge right now.

    Max vehicles on an edge is ``length * lanes / (avg_length + s0)``.
    """
    t = world.t if t is None else t
    if abs(t / 60.0 - round(t / 60.0)) > 1e-9:
        raise ValueError("utilization is sampled on whole minutes")
    road = world.road
    count = np.zeros(len(road.length))
    speed = np.zeros(len(road.length))
    for vid in world.active_ids:
        veh = world.vehicles[vid]
        count[veh.edge] += 1
        speed[veh.edge] += veh.v
    return UtilizationSample(t, utilization(count, road, world.cfg), _mean_speed(count, speed))


def max_vehicles(lengths, lanes, avg_length: float, s0: float):
    return np.asarray(lengths) * np.asarray(lanes) / (avg_length + s0)


def utilization(count, road: RoadNetwork, cfg: SimConfig):
    cap = max_vehicles(road.length, road.lanes, cfg.avg_vehicle_length, cfg.car.s0)
    # sub-s0 standstill gaps can squeeze in more vehicles than the nominal capacity
    return np.minimum(np.asarray(count) / cap, 1.0)


def _mean_speed(count, speed):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, speed / np.maximum(count, 1), np.nan)


def vehicle_rngs(seed_seq: np.random.SeedSequence, n: int):
    return [np.random.default_rng(s) for s in seed_seq.spawn(n)]


__all__ = [
    "SimConfig", "World", "RoadNetwork", "Plan", "UtilizationSample", "sample_metrics",
    "lane_change_probability", "max_vehicles", "utilization", "vehicle_rngs", "CAR", "TRUCK",
]
