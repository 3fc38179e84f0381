"""Stop-sign and traffic-signal control at intersections."""
from __future__ import annotations

import csv
from collections import deque
from pathlib import Path

from ..errors import MalformedRow

CONTROL_TYPES = ("stop", "signal", "uncontrolled")


def read_controls(path) -> dict[int, str]:
    """``node_id -> control`` from a ``node_id,control`` CSV."""
    path = Path(path)
    out = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"node_id", "control"} <= set(reader.fieldnames or []):
            raise MalformedRow(path, 1, "expected columns node_id,control")
        for line, row in enumerate(reader, start=2):
            kind = (row["control"] or "").strip()
            try:
                node = int(row["node_id"])
            except (TypeError, ValueError):
                raise MalformedRow(path, line, "bad node id") from None
            if kind not in CONTROL_TYPES:
                raise MalformedRow(path, line, f"unknown control {kind!r}")
            out[node] = kind
    return out


class IntersectionControl:
    """Per-node control state, indexed by node index.

    Signals cycle through one phase per (inbound, outbound) edge pair, each
    lasting ``phase_duration`` seconds. Stop signs admit one vehicle at a time
    in order of arrival at the stop line; the grant is held until that vehicle
    has completely entered its next edge.
    """

    def __init__(self, net, controls: dict[int, str], phase_duration: float = 10.0):
        self.phase_duration = phase_duration
        self.kind = {}
        for node_id, kind in controls.items():
            if node_id in net.node_index and kind != "uncontrolled":
                self.kind[net.node_index[node_id]] = kind
        self.inbound: dict = {}
        self.outbound: dict = {}
        for n in self.kind:
            self.inbound[n] = sorted(int(e) for e in (net.head == n).nonzero()[0])
            self.outbound[n] = sorted(int(e) for e in (net.tail == n).nonzero()[0])
        self.reset()

    def reset(self):
        self.queue = {n: deque() for n, k in self.kind.items() if k == "stop"}
        self.queued: set = set()
        self.holder: dict = {}
        self.movement: dict = {}  # vid -> (in_edge, out_edge) for stop requests

    def kind_of(self, node: int) -> str:
        return self.kind.get(node, "uncontrolled")

    def n_phases(self, node: int) -> int:
        return len(self.inbound[node]) * len(self.outbound[node])

    def cycle_length(self, node: int) -> float:
        return self.n_phases(node) * self.phase_duration

    def active_phase(self, node: int, t: float) -> int:
        return int(t // self.phase_duration) % self.n_phases(node)

    def movement_phase(self, node: int, e_in: int, e_out: int) -> int:
        return self.inbound[node].index(e_in) * len(self.outbound[node]) + self.outbound[node].index(e_out)

    def may_enter(self, node: int, e_in: int, e_out: int, vid: int, t: float) -> bool:
        kind = self.kind.get(node)
        if kind is None:
            return True
        if kind == "signal":
            return self.active_phase(node, t) == self.movement_phase(node, e_in, e_out)
        return self.holder.get(node) == vid

    def approaches(self, node: int, t: float) -> dict:
        """``(in_edge, out_edge) -> True`` (go) or ``False`` (stop) at time ``t``."""
        kind = self.kind.get(node)
        if kind is None:
            return None
        out = {}
        holder = self.holder.get(node)
        granted = self.movement.get(holder) if holder is not None else None
        for e_in in self.inbound[node]:
            for e_out in self.outbound[node]:
                if kind == "signal":
                    out[(e_in, e_out)] = self.active_phase(node, t) == self.movement_phase(node, e_in, e_out)
                else:
                    out[(e_in, e_out)] = granted == (e_in, e_out)
        return out

    # stop-sign bookkeeping, called from the sequential commit phase

    def request(self, node: int, vid: int, e_in: int, e_out: int):
        if vid not in self.queued and self.holder.get(node) != vid:
            self.queue[node].append(vid)
            self.queued.add(vid)
            self.movement[vid] = (e_in, e_out)

    def release(self, node: int, vid: int):
        if self.holder.get(node) == vid:
            del self.holder[node]
            self.movement.pop(vid, None)

    def grant(self) -> list:
        """Hand free stop intersections to the head of their queue."""
        granted = []
        for node, q in self.queue.items():
            if node not in self.holder and q:
                vid = q.popleft()
                self.queued.discard(vid)
                self.holder[node] = vid
                granted.append((node, vid))
        return granted
