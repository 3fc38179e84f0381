"""Traffic atlas: per-lane occupancy cells in one contiguous buffer.

Each lane of each edge is a run of 1 m cells holding a vehicle id or -1.
Lanes are cut into chunks of at most :data:`CHUNK_CELLS` cells which are
laid out back to back, so memory scales with total lane length rather than
with the longest edge. Chunks of one lane are adjacent in the buffer, which
lets range queries use a single slice.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..errors import AtlasOverflow

CELL_M = 1.0
CHUNK_CELLS = 1000
EMPTY = -1


def body_cells(front: float, length: float) -> tuple[int, int]:
    """Half-open cell range ``[c0, c1)`` covered by a vehicle, before clipping.

    The range starts at the cell holding the rear bumper and spans
    ``ceil(length)`` cells.
    """
    c0 = math.floor(front - length)
    return c0, c0 + math.ceil(length)


@njit(cache=True)
def _first_hit(seg, skip):
    for i in range(seg.shape[0]):
        x = seg[i]
        if x != EMPTY and x != skip:
            return x
    return EMPTY


@njit(cache=True)
def _last_hit(seg, skip):
    for i in range(seg.shape[0] - 1, -1, -1):
        x = seg[i]
        if x != EMPTY and x != skip:
            return x
    return EMPTY


class AtlasLayout:
    """Static chunk table shared by every atlas buffer of a network."""

    def __init__(self, lengths, lanes):
        lengths = np.asarray(lengths, dtype=float)
        lanes = np.asarray(lanes, dtype=np.int64)
        self.n_cells = np.ceil(lengths / CELL_M).astype(np.int64)
        self.lanes = lanes
        self.lane_base = np.concatenate([[0], np.cumsum(lanes)]).astype(np.int64)
        chunks_per_lane = np.maximum(1, -(-self.n_cells // CHUNK_CELLS))
        lane_chunks = np.repeat(chunks_per_lane, lanes)
        self.first_chunk = np.concatenate([[0], np.cumsum(lane_chunks)]).astype(np.int64)
        starts = []
        offset = 0
        for e in range(len(lengths)):
            for _ in range(lanes[e]):
                remaining = int(self.n_cells[e])
                for _ in range(int(chunks_per_lane[e])):
                    starts.append(offset)
                    size = min(CHUNK_CELLS, remaining)
                    offset += size
                    remaining -= size
        self.chunk_start = np.array(starts, dtype=np.int64)
        self.size = offset
        lane_chunk0 = self.first_chunk[:-1]
        self.lane_start = self.chunk_start[lane_chunk0] if len(lane_chunk0) else np.zeros(0, np.int64)
        self._n_cells = self.n_cells.tolist()
        self._lane_base = self.lane_base.tolist()
        self._lane_start = self.lane_start.tolist()

    def span(self, edge: int, lane: int, c0: int, c1: int) -> tuple[int, int]:
        """Flat buffer range of cells ``[c0, c1)`` clipped to the lane (may be empty)."""
        n = self._n_cells[edge]
        c0 = 0 if c0 < 0 else c0
        c1 = n if c1 > n else c1
        base = self._lane_start[self._lane_base[edge] + lane]
        if c1 < c0:
            c1 = c0
        return base + c0, base + c1

    def lane_id(self, edge: int, lane: int) -> int:
        return int(self.lane_base[edge] + lane)

    def pieces(self, edge: int, lane: int, c0: int, c1: int):
        """Yield ``(flat_start, flat_stop, first_cell)`` covering cells ``[c0, c1)``.

        The range is clipped to the lane; pieces never cross a chunk border.
        """
        n = int(self.n_cells[edge])
        c0, c1 = max(c0, 0), min(c1, n)
        if c0 >= c1:
            return
        base = int(self.first_chunk[self.lane_base[edge] + lane])
        k = c0 // CHUNK_CELLS
        if (c1 - 1) // CHUNK_CELLS == k:
            flat = int(self.chunk_start[base + k]) + c0 - k * CHUNK_CELLS
            yield flat, flat + (c1 - c0), c0
            return
        c = c0
        while c < c1:
            k, off = divmod(c, CHUNK_CELLS)
            stop = min(c1, (k + 1) * CHUNK_CELLS)
            flat = int(self.chunk_start[base + k]) + off
            yield flat, flat + (stop - c), c
            c = stop

    def pieces_reversed(self, edge: int, lane: int, c0: int, c1: int):
        return reversed(list(self.pieces(edge, lane, c0, c1)))


class TrafficAtlas:
    """One occupancy buffer; the engine keeps two and swaps them each step."""

    def __init__(self, layout: AtlasLayout):
        self.layout = layout
        self.cells = np.full(layout.size, EMPTY, dtype=np.int32)

    def clear(self):
        self.cells.fill(EMPTY)

    def copy_from(self, other: TrafficAtlas):
        np.copyto(self.cells, other.cells)

    def get(self, edge: int, lane: int, cell: int) -> int:
        a, b = self.layout.span(edge, lane, cell, cell + 1)
        return int(self.cells[a]) if b > a else EMPTY

    def write(self, edge: int, lane: int, front: float, length: float, vid: int):
        c0, c1 = body_cells(front, length)
        a, b = self.layout.span(edge, lane, c0, c1)
        seg = self.cells[a:b]
        if _first_hit(seg, EMPTY) != EMPTY:
            raise AtlasOverflow(f"cell collision on edge {edge} lane {lane}")
        seg[:] = vid

    def erase(self, edge: int, lane: int, front: float, length: float, vid: int):
        c0, c1 = body_cells(front, length)
        a, b = self.layout.span(edge, lane, c0, c1)
        seg = self.cells[a:b]
        seg[seg == vid] = EMPTY

    def occupants(self, edge: int, lane: int, c0: int, c1: int) -> set:
        a, b = self.layout.span(edge, lane, c0, c1)
        found = set(self.cells[a:b].tolist())
        found.discard(EMPTY)
        return found

    def first_occupant(self, edge: int, lane: int, c0: int, c1: int | None = None,
                       skip: int = EMPTY) -> int:
        """Id in the lowest occupied cell of ``[c0, c1)``, or -1."""
        if c1 is None:
            c1 = self.layout._n_cells[edge]
        a, b = self.layout.span(edge, lane, c0, c1)
        return int(_first_hit(self.cells[a:b], skip))

    def last_occupant(self, edge: int, lane: int, c0: int, c1: int, skip: int = EMPTY) -> int:
        """Id in the highest occupied cell of ``[c0, c1)``, or -1."""
        a, b = self.layout.span(edge, lane, c0, c1)
        return int(_last_hit(self.cells[a:b], skip))

    def check_consistency(self, vehicles) -> None:
        """Raise unless every cell owner is a vehicle whose body spans exactly
        its own consecutive cells in one lane."""
        owners, counts = np.unique(self.cells[self.cells != EMPTY], return_counts=True)
        expected = {}
        for veh in vehicles:
            if not veh.active:
                continue
            c0, c1 = body_cells(veh.pos, veh.params.length)
            a, b = self.layout.span(veh.edge, veh.lane, c0, c1)
            n = b - a
            if n:
                expected[veh.id] = n
        got = dict(zip(owners.tolist(), counts.tolist()))
        if got != expected:
            raise AtlasOverflow("atlas occupancy does not match vehicle bodies")
