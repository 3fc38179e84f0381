"""Array view of a :class:`~trafficpipe.graph.RoadGraph` and compiled
shortest-path kernels shared by assignment and microsimulation.

Node indices follow ascending node id and edge indices follow ascending
``(from, to, key)``, so "smallest index" and "smallest id" coincide for
every tie-break.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import UnreachableDestination

# origins handled per reduction block; fixed so sums do not depend on workers
ORIGIN_BLOCK = 32


# 4-ary min-heap with lazy deletion: a node is pushed again whenever its
# distance improves and stale entries are skipped when popped. Cheaper than
# decrease-key bookkeeping on sparse road graphs.
@njit(cache=True, nogil=True)
def _push(hkey, hnode, size, key, node):
    i = size
    while i > 0:
        p = (i - 1) >> 2
        if hkey[p] <= key:
            break
        hkey[i] = hkey[p]
        hnode[i] = hnode[p]
        i = p
    hkey[i] = key
    hnode[i] = node
    return size + 1


@njit(cache=True, nogil=True)
def _pop(hkey, hnode, size):
    """Remove the root of a heap holding ``size`` items; returns the new size."""
    size -= 1
    if size > 0:
        key = hkey[size]
        node = hnode[size]
        i = 0
        while True:
            c = 4 * i + 1
            if c >= size:
                break
            m = c
            mk = hkey[c]
            for k in range(c + 1, min(c + 4, size)):
                if hkey[k] < mk:
                    mk = hkey[k]
                    m = k
            if mk >= key:
                break
            hkey[i] = mk
            hnode[i] = hnode[m]
            i = m
        hkey[i] = key
        hnode[i] = node
    return size


@njit(cache=True, nogil=True)
def _sssp(indptr, adj_edge, head, tail, weights, source, dist, pred, order):
    """Dijkstra with a lazy 4-ary heap; returns the number of settled nodes,
    listed in settle order in ``order``."""
    n = indptr.shape[0] - 1
    # at most one push per successful relaxation, plus the source
    cap = indptr[n] + 1
    hkey = np.empty(cap)
    hnode = np.empty(cap, dtype=np.int64)
    settled = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        dist[i] = np.inf
        pred[i] = -1
    dist[source] = 0.0
    size = _push(hkey, hnode, 0, 0.0, source)
    count = 0
    while size > 0:
        u = hnode[0]
        d = hkey[0]
        size = _pop(hkey, hnode, size)
        if settled[u]:
            continue
        settled[u] = True
        order[count] = u
        count += 1
        for j in range(indptr[u], indptr[u + 1]):
            e = adj_edge[j]
            v = head[e]
            if settled[v]:
                continue
            nd = d + weights[e]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = e
                size = _push(hkey, hnode, size, nd, v)
            elif nd == dist[v]:
                pe = pred[v]
                # equal cost: prefer the smaller predecessor node, then edge
                if u < tail[pe] or (u == tail[pe] and e < pe):
                    pred[v] = e
    return count


@njit(cache=True, nogil=True)
def _aon_block(indptr, adj_edge, head, tail, weights, origins, od_ptr, dests, rates,
               volumes, failure):
    n = indptr.shape[0] - 1
    dist = np.empty(n)
    pred = np.empty(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    node_flow = np.zeros(n)
    for k in range(origins.shape[0]):
        o = origins[k]
        count = _sssp(indptr, adj_edge, head, tail, weights, o, dist, pred, order)
        for j in range(od_ptr[k], od_ptr[k + 1]):
            d = dests[j]
            if not np.isfinite(dist[d]):
                failure[0] = o
                failure[1] = d
                return False
            node_flow[d] += rates[j]
        for i in range(count - 1, 0, -1):
            v = order[i]
            f = node_flow[v]
            if f != 0.0:
                e = pred[v]
                volumes[e] += f
                node_flow[tail[e]] += f
                node_flow[v] = 0.0
        node_flow[o] = 0.0
    return True


@dataclass(frozen=True)
class ODArrays:
    """Demand grouped by origin index, CSR-style."""

    origins: np.ndarray  # unique origin node indices, ascending
    od_ptr: np.ndarray
    dests: np.ndarray
    rates: np.ndarray

    @classmethod
    def build(cls, origin_idx, dest_idx, rates) -> ODArrays:
        origin_idx = np.asarray(origin_idx, dtype=np.int64)
        dest_idx = np.asarray(dest_idx, dtype=np.int64)
        rates = np.asarray(rates, dtype=float)
        order = np.lexsort((dest_idx, origin_idx))
        origin_idx, dest_idx, rates = origin_idx[order], dest_idx[order], rates[order]
        origins, starts = np.unique(origin_idx, return_index=True)
        od_ptr = np.append(starts, len(origin_idx)).astype(np.int64)
        return cls(origins, od_ptr, dest_idx, rates)


class NetworkArrays:
    """Contiguous node/edge arrays with an outgoing-edge CSR index."""

    def __init__(self, node_ids, tail, head, length, edge_keys):
        self.node_ids = np.asarray(node_ids, dtype=np.int64)
        self.node_index = {int(n): i for i, n in enumerate(self.node_ids)}
        self.tail = np.asarray(tail, dtype=np.int64)
        self.head = np.asarray(head, dtype=np.int64)
        self.length = np.asarray(length, dtype=float)
        self.edge_keys = list(edge_keys)
        self.edge_index = {k: i for i, k in enumerate(self.edge_keys)}
        n = len(self.node_ids)
        order = np.lexsort((np.arange(len(self.tail)), self.head, self.tail))
        self.adj_edge = order.astype(np.int64)
        counts = np.bincount(self.tail, minlength=n)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @classmethod
    def from_graph(cls, g) -> NetworkArrays:
        node_ids = list(g.nodes)
        index = {nid: i for i, nid in enumerate(node_ids)}
        edges = list(g.edges.values())
        return cls(
            node_ids,
            [index[e.u] for e in edges],
            [index[e.v] for e in edges],
            [e.length for e in edges],
            [e.id for e in edges],
        )

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.tail)

    def shortest_tree(self, source: int, weights):
        """Single-source shortest paths from node index ``source``.

        Returns ``(dist, pred_edge)`` arrays indexed by node index.
        """
        n = self.n_nodes
        dist = np.empty(n)
        pred = np.empty(n, dtype=np.int64)
        order = np.empty(n, dtype=np.int64)
        _sssp(self.indptr, self.adj_edge, self.head, self.tail,
              np.ascontiguousarray(weights, dtype=float), np.int64(source), dist, pred, order)
        return dist, pred

    def path_edges(self, pred, source: int, dest: int) -> list[int]:
        """Edge indices along the tree path ``source -> dest``."""
        path = []
        node = dest
        while node != source:
            e = int(pred[node])
            if e < 0:
                raise UnreachableDestination(int(self.node_ids[source]), int(self.node_ids[dest]))
            path.append(e)
            node = int(self.tail[e])
        path.reverse()
        return path

    def all_or_nothing(self, od: ODArrays, weights, workers: int = 1) -> np.ndarray:
        """Load every OD rate onto its shortest path under ``weights``.

        Origins are processed in fixed blocks whose partial volume vectors are
        summed in block order, so the result is bitwise independent of
        ``workers``.
        """
        weights = np.ascontiguousarray(weights, dtype=float)
        n_blocks = max(1, -(-len(od.origins) // ORIGIN_BLOCK))

        def run(b):
            lo, hi = b * ORIGIN_BLOCK, min((b + 1) * ORIGIN_BLOCK, len(od.origins))
            vol = np.zeros(self.n_edges)
            failure = np.zeros(2, dtype=np.int64)
            ptr = od.od_ptr[lo:hi + 1]
            ok = _aon_block(self.indptr, self.adj_edge, self.head, self.tail, weights,
                            od.origins[lo:hi], ptr - ptr[0], od.dests[ptr[0]:ptr[-1]],
                            od.rates[ptr[0]:ptr[-1]], vol, failure)
            if not ok:
                raise UnreachableDestination(int(self.node_ids[failure[0]]),
                                             int(self.node_ids[failure[1]]))
            return vol

        if workers > 1 and n_blocks > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                partials = list(pool.map(run, range(n_blocks)))
        else:
            partials = [run(b) for b in range(n_blocks)]
        total = np.zeros(self.n_edges)
        for p in partials:
            total += p
        return total
