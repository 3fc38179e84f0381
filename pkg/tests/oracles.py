"""Independent reference implementations used as test oracles.

Each function here is written from the definitions directly, without
touching the package internals it checks.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

# ------------------------------------------------------------------ geodesy


def great_circle_arc(lat1, lon1, lat2, lon2, r=6_371_000.0):
    """Central angle by the vector dot product (no haversine algebra)."""
    def unit(lat, lon):
        la, lo = math.radians(lat), math.radians(lon)
        return np.array([math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la)])

    a, b = unit(lat1, lon1), unit(lat2, lon2)
    # atan2 of cross and dot is well conditioned at 0 and pi
    return r * math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b)))


def law_of_cosines(lat1, lon1, lat2, lon2, r=6_371_000.0):
    """Scalar spherical law of cosines with the acos argument clamped."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = abs(math.radians(lon1) - math.radians(lon2))
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return r * math.acos(min(1.0, max(-1.0, c)))


def nearest_exhaustive(lat, lon, nodes):
    """Smallest-id node at minimum distance; ``nodes`` is (id, lat, lon)."""
    best = None
    for nid, nlat, nlon in sorted(nodes):
        d = law_of_cosines(lat, lon, nlat, nlon)
        if best is None or d < best[0]:
            best = (d, nid)
    return best[1]


# -------------------------------------------------------------------- graphs


def reachable(adj, start):
    seen = {start}
    todo = [start]
    while todo:
        u = todo.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


def scc_bruteforce(nodes, arcs):
    """Strongly connected components from pairwise reachability."""
    fwd, bwd = defaultdict(set), defaultdict(set)
    for u, v in arcs:
        fwd[u].add(v)
        bwd[v].add(u)
    comps, assigned = [], set()
    for n in sorted(nodes):
        if n in assigned:
            continue
        comp = reachable(fwd, n) & reachable(bwd, n)
        assigned |= comp
        comps.append(frozenset(comp))
    return comps


def largest_scc_bruteforce(nodes, arcs):
    comps = scc_bruteforce(nodes, arcs)
    return max(comps, key=lambda c: (len(c), -min(c)))


def is_strongly_connected(nodes, arcs):
    nodes = set(nodes)
    if not nodes:
        return False
    fwd, bwd = defaultdict(set), defaultdict(set)
    for u, v in arcs:
        fwd[u].add(v)
        bwd[v].add(u)
    start = min(nodes)
    return reachable(fwd, start) >= nodes and reachable(bwd, start) >= nodes


def is_pass_through(arcs, n):
    """Whether node ``n`` only relays traffic: one arc in and one out to
    different neighbors, or two-way to exactly two neighbors. ``arcs`` is
    ``[(u, v), ...]``; nodes on a self-loop never qualify."""
    ins = [u for u, v in arcs if v == n]
    outs = [v for u, v in arcs if u == n]
    if n in ins:
        return False
    if len(ins) == 1 and len(outs) == 1:
        return ins[0] != outs[0]
    if len(ins) == 2 and len(outs) == 2:
        return len(set(ins)) == 2 and set(ins) == set(outs)
    return False


def subdivide(h_arcs, two_way, first_new_id):
    """Split arcs of an intersection graph into chains of pass-through nodes.

    ``h_arcs`` is ``[(u, v, [piece lengths...])]``, one entry per direction.
    For pairs in ``two_way`` both directions must have the same number of
    pieces and they share their intermediate nodes. Returns
    ``(arcs, new_node_ids)`` with arcs ``(u, v, length)``.
    """
    out, new_nodes = [], []
    next_id = first_new_id
    shared = {}
    for u, v, pieces in h_arcs:
        key = (min(u, v), max(u, v))
        if key in two_way and key in shared:
            mids = list(reversed(shared[key]))
        else:
            mids = list(range(next_id, next_id + len(pieces) - 1))
            next_id += len(mids)
            new_nodes += mids
            shared[key] = mids
        stops = [u] + mids + [v]
        out += [(a, b, length) for a, b, length in zip(stops, stops[1:], pieces)]
    return out, new_nodes


# ------------------------------------------------------------- assignment


def enumerate_paths(arcs, src, dst, max_len=8):
    """All simple paths as lists of arc indices; ``arcs`` is [(u, v), ...]."""
    out_arcs = defaultdict(list)
    for i, (u, _) in enumerate(arcs):
        out_arcs[u].append(i)
    paths = []

    def dfs(node, seen, path):
        if node == dst:
            paths.append(list(path))
            return
        if len(path) >= max_len:
            return
        for i in out_arcs[node]:
            v = arcs[i][1]
            if v not in seen:
                seen.add(v)
                path.append(i)
                dfs(v, seen, path)
                path.pop()
                seen.discard(v)

    dfs(src, {src}, [])
    return paths


def aon_by_enumeration(arcs, weights, od):
    """All-or-nothing volumes using the cheapest enumerated path per OD pair.

    Assumes the cheapest path is unique (callers use continuous random weights).
    """
    vol = np.zeros(len(arcs))
    for (o, d), rate in od.items():
        paths = enumerate_paths(arcs, o, d, max_len=len(arcs))
        best = min(paths, key=lambda p: sum(weights[i] for i in p))
        for i in best:
            vol[i] += rate
    return vol


def golden_section_min(f, lo=0.0, hi=1.0, tol=1e-12):
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def bpr(t0, cap, v, alpha=0.15, beta=4.0):
    return t0 * (1.0 + alpha * (v / cap) ** beta)


def two_route_equilibrium(t0a, t0b, ca, cb, demand, alpha=0.15, beta=4.0):
    """Flow on route A by bisection on t_A(x) - t_B(demand - x)."""
    def excess(x):
        return bpr(t0a, ca, x, alpha, beta) - bpr(t0b, cb, demand - x, alpha, beta)

    if excess(demand) <= 0:
        return demand
    if excess(0.0) >= 0:
        return 0.0
    lo, hi = 0.0, demand
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ------------------------------------------------------------------ microsim


def idm_scalar(v, v0, s, dv, a, b, T, s0, delta=4.0):
    """Intelligent Driver Model written out term by term."""
    free_term = (v / v0) ** delta
    if s == math.inf:
        return a * (1.0 - free_term)
    desired_gap = s0 + T * v + (v * dv) / (2.0 * math.sqrt(a * b))
    return a * (1.0 - free_term - (desired_gap / s) ** 2)


def integrate_platoon(states, v0, params, dt, steps):
    """Explicit single-lane integration of IDM vehicles ordered front to back.

    ``states`` is a list of ``[front_pos, v]``; the leader (index 0) drives
    freely. All accelerations use the previous step's state, then
    ``v <- max(0, v + a dt)`` and ``x <- x + v dt``. Returns the trajectory
    as a list of per-step state lists.
    """
    a, b, T, s0, length = params
    traj = []
    cur = [list(s) for s in states]
    for _ in range(steps):
        acc = []
        for i, (x, v) in enumerate(cur):
            if i == 0:
                acc.append(idm_scalar(v, v0, math.inf, 0.0, a, b, T, s0))
            else:
                lx, lv = cur[i - 1]
                acc.append(idm_scalar(v, v0, (lx - length) - x, v - lv, a, b, T, s0))
        nxt = []
        for (x, v), ai in zip(cur, acc):
            v_new = max(0.0, v + ai * dt)
            nxt.append([x + v_new * dt, v_new])
        cur = nxt
        traj.append([list(s) for s in cur])
    return traj


def co_rate_oracle(v_mph):
    return -0.064 + 0.0056 * v_mph + 0.00026 * (v_mph - 50.0) * (v_mph - 50.0)


def fuel_rate_oracle(v, a):
    alpha = 0.666
    beta1 = 0.072
    r_t = 0.269 * v + 0.0171 * v * v + 0.000672 * v * v * v
    if a > 0:
        inertia = 1.680 * a * v
        p_ea = 0.79296 * a * a * v
    else:
        inertia = 0.0
        p_ea = 0.0
    return max(alpha, alpha + beta1 * (r_t + inertia + p_ea))
