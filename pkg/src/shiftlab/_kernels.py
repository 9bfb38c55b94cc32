"""Hot inner loops, compiled with numba when available.

Each kernel has a numba implementation and a pure-numpy implementation with the
same signature. The numba path is used unless numba cannot be imported or the
environment variable ``SHIFTLAB_DISABLE_NUMBA`` is set to a non-empty value
other than ``0``. The flag only picks the compute backend; it never changes the
meaning of a result.
"""

from __future__ import annotations

import os

import numpy as np

_EPS = 1e-12

_disabled = os.environ.get("SHIFTLAB_DISABLE_NUMBA", "").strip() not in ("", "0")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _bincount_flat_np(flat: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(flat, minlength=size).astype(np.int64)


def _bincount_weighted_np(flat: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(flat, weights=weights, minlength=size).astype(np.float64)


def _bellman_ford_np(n_nodes, tail, head, rescap, cost, source):
    """Shortest paths on the residual graph by vectorised relaxation rounds."""
    dist = np.full(n_nodes, np.inf)
    dist[source] = 0.0
    parent = np.full(n_nodes, -1, dtype=np.int64)
    live = np.flatnonzero(rescap > 0)
    t_live, h_live, c_live = tail[live], head[live], cost[live]
    for _ in range(n_nodes):
        cand = dist[t_live] + c_live
        better = cand < dist[h_live] - _EPS
        if not better.any():
            break
        # best candidate per head node, ties to the lowest edge index (as the loop kernel)
        idx = np.flatnonzero(better)
        order = np.lexsort((cand[idx], h_live[idx]))
        idx = idx[order]
        heads = h_live[idx]
        first = np.ones(len(idx), dtype=bool)
        first[1:] = heads[1:] != heads[:-1]
        idx = idx[first]
        dist[h_live[idx]] = cand[idx]
        parent[h_live[idx]] = live[idx]
    return dist, parent


def _min_cost_flow_np(n_nodes, tail, head, cap, cost, source, sink, required):
    m = len(tail)
    # residual graph: edge 2e is forward, 2e+1 its reverse
    r_tail = np.empty(2 * m, dtype=np.int64)
    r_head = np.empty(2 * m, dtype=np.int64)
    r_cost = np.empty(2 * m, dtype=np.float64)
    rescap = np.zeros(2 * m, dtype=np.int64)
    r_tail[0::2], r_tail[1::2] = tail, head
    r_head[0::2], r_head[1::2] = head, tail
    r_cost[0::2], r_cost[1::2] = cost, -cost
    rescap[0::2] = cap
    sent = 0
    while sent < required:
        dist, parent = _bellman_ford_np(n_nodes, r_tail, r_head, rescap, r_cost, source)
        if not np.isfinite(dist[sink]):
            break
        path = []
        v = sink
        while v != source:
            e = parent[v]
            path.append(e)
            v = r_tail[e]
        path = np.asarray(path, dtype=np.int64)
        push = min(required - sent, int(rescap[path].min()))
        rescap[path] -= push
        rescap[path ^ 1] += push
        sent += push
    flow = rescap[1::2].copy()
    return flow, sent


def _enumerate_np(weight, size, cap, tol):
    n_groups, n_loc = weight.shape
    if n_groups == 0:
        return np.zeros(0, dtype=np.int64), 0.0, True
    combos = np.indices((n_loc,) * n_groups).reshape(n_groups, -1).T  # lexicographic
    load = np.zeros((len(combos), n_loc), dtype=np.int64)
    for g in range(n_groups):
        np.add.at(load, (np.arange(len(combos)), combos[:, g]), size[g])
    feasible = np.all(load <= cap[None, :], axis=1)
    if not feasible.any():
        return np.zeros(n_groups, dtype=np.int64), -np.inf, False
    value = np.zeros(len(combos))
    for g in range(n_groups):
        value = value + weight[g, combos[:, g]]
    value[~feasible] = -np.inf
    top = value.max()
    best = int(np.flatnonzero(value >= top - tol)[0])
    return combos[best].astype(np.int64), float(value[best]), True


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _bincount_flat_nb(flat, size):
        out = np.zeros(size, dtype=np.int64)
        for i in range(flat.shape[0]):
            out[flat[i]] += 1
        return out

    @njit(cache=True)
    def _bincount_weighted_nb(flat, weights, size):
        out = np.zeros(size, dtype=np.float64)
        for i in range(flat.shape[0]):
            out[flat[i]] += weights[i]
        return out

    @njit(cache=True)
    def _bellman_ford_nb(n_nodes, tail, head, rescap, cost, source):
        dist = np.full(n_nodes, np.inf)
        dist[source] = 0.0
        parent = np.full(n_nodes, -1, dtype=np.int64)
        m = tail.shape[0]
        for _ in range(n_nodes):
            new_dist = dist.copy()
            new_parent = parent.copy()
            changed = False
            for e in range(m):
                if rescap[e] <= 0:
                    continue
                u = tail[e]
                if dist[u] == np.inf:
                    continue
                cand = dist[u] + cost[e]
                v = head[e]
                if cand < dist[v] - _EPS and cand < new_dist[v]:
                    new_dist[v] = cand
                    new_parent[v] = e
                    changed = True
            dist = new_dist
            parent = new_parent
            if not changed:
                break
        return dist, parent

    @njit(cache=True)
    def _min_cost_flow_nb(n_nodes, tail, head, cap, cost, source, sink, required):
        m = tail.shape[0]
        r_tail = np.empty(2 * m, dtype=np.int64)
        r_head = np.empty(2 * m, dtype=np.int64)
        r_cost = np.empty(2 * m, dtype=np.float64)
        rescap = np.zeros(2 * m, dtype=np.int64)
        for e in range(m):
            r_tail[2 * e] = tail[e]
            r_tail[2 * e + 1] = head[e]
            r_head[2 * e] = head[e]
            r_head[2 * e + 1] = tail[e]
            r_cost[2 * e] = cost[e]
            r_cost[2 * e + 1] = -cost[e]
            rescap[2 * e] = cap[e]
        sent = 0
        while sent < required:
            dist, parent = _bellman_ford_nb(n_nodes, r_tail, r_head, rescap, r_cost, source)
            if dist[sink] == np.inf:
                break
            push = required - sent
            v = sink
            while v != source:
                e = parent[v]
                if rescap[e] < push:
                    push = rescap[e]
                v = r_tail[e]
            v = sink
            while v != source:
                e = parent[v]
                rescap[e] -= push
                rescap[e ^ 1] += push
                v = r_tail[e]
            sent += push
        flow = np.empty(m, dtype=np.int64)
        for e in range(m):
            flow[e] = rescap[2 * e + 1]
        return flow, sent

    @njit(cache=True)
    def _enumerate_nb(weight, size, cap, tol):
        n_groups, n_loc = weight.shape
        best = np.zeros(n_groups, dtype=np.int64)
        if n_groups == 0:
            return best, 0.0, True
        combo = np.zeros(n_groups, dtype=np.int64)
        load = np.zeros(n_loc, dtype=np.int64)
        top = -np.inf
        best_val = -np.inf
        found = False
        # pass 0 finds the maximum, pass 1 the first combination within tol of it
        for sweep in range(2):
            combo[:] = 0
            while True:
                load[:] = 0
                ok = True
                for g in range(n_groups):
                    load[combo[g]] += size[g]
                for j in range(n_loc):
                    if load[j] > cap[j]:
                        ok = False
                        break
                if ok:
                    val = 0.0
                    for g in range(n_groups):
                        val = val + weight[g, combo[g]]
                    if sweep == 0:
                        if not found or val > top:
                            top = val
                            found = True
                    elif val >= top - tol:
                        best_val = val
                        best[:] = combo
                        return best, best_val, True
                # odometer increment, last group fastest (lexicographic order)
                g = n_groups - 1
                while g >= 0:
                    combo[g] += 1
                    if combo[g] < n_loc:
                        break
                    combo[g] = 0
                    g -= 1
                if g < 0:
                    break
            if not found:
                break
        return best, best_val, found


NUMPY_KERNELS = {
    "bincount_flat": _bincount_flat_np,
    "bincount_weighted": _bincount_weighted_np,
    "min_cost_flow": _min_cost_flow_np,
    "enumerate_assignments": _enumerate_np,
}

if HAS_NUMBA:
    NUMBA_KERNELS = {
        "bincount_flat": _bincount_flat_nb,
        "bincount_weighted": _bincount_weighted_nb,
        "min_cost_flow": _min_cost_flow_nb,
        "enumerate_assignments": _enumerate_nb,
    }
    BACKEND = "numba"
else:
    NUMBA_KERNELS = {}
    BACKEND = "numpy"

_ACTIVE = NUMBA_KERNELS if HAS_NUMBA else NUMPY_KERNELS


def bincount_flat(flat: np.ndarray, size: int) -> np.ndarray:
    """Counts of each integer in ``flat`` over ``range(size)``."""
    return _ACTIVE["bincount_flat"](np.ascontiguousarray(flat, dtype=np.int64), int(size))


def bincount_weighted(flat: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    return _ACTIVE["bincount_weighted"](
        np.ascontiguousarray(flat, dtype=np.int64),
        np.ascontiguousarray(weights, dtype=np.float64),
        int(size),
    )


def min_cost_flow(n_nodes, tail, head, cap, cost, source, sink, required):
    """Successive-shortest-path min-cost flow with integer capacities.

    Returns ``(flow_per_edge, total_sent)``. ``total_sent < required`` means the
    demand cannot be routed.
    """
    return _ACTIVE["min_cost_flow"](
        int(n_nodes),
        np.ascontiguousarray(tail, dtype=np.int64),
        np.ascontiguousarray(head, dtype=np.int64),
        np.ascontiguousarray(cap, dtype=np.int64),
        np.ascontiguousarray(cost, dtype=np.float64),
        int(source),
        int(sink),
        int(required),
    )


def enumerate_assignments(weight, size, cap, tol=0.0):
    """Exhaustive group->location search.

    Returns the lexicographically first feasible map whose value is within
    ``tol`` of the maximum, its value, and whether any feasible map exists.
    """
    best, val, found = _ACTIVE["enumerate_assignments"](
        np.ascontiguousarray(weight, dtype=np.float64),
        np.ascontiguousarray(size, dtype=np.int64),
        np.ascontiguousarray(cap, dtype=np.int64),
        float(tol),
    )
    return np.asarray(best), float(val), bool(found)
