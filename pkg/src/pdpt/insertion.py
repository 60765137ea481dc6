"""Request insertion: candidate enumeration, exact O(1) checks, application.

Gaps of a route with ``L`` stops are numbered ``1 .. L-1``; gap ``g`` puts
the new visit right before the current stop ``g``. A transferred insertion
uses one transfer point ``t`` and two different vehicles. A vehicle that
already visits ``t`` must reuse that visit (one visit per vehicle and
location), so its drop or pick is merged into the existing stop.

The check is exact as long as travel-plus-service times obey the triangle
inequality, which holds for both supported metrics.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .model import Instance
from .routing import (
    DELIVER,
    DROP,
    EPS,
    PICK,
    PICKUP,
    Solution,
    Stop,
    compute_schedule,
    route_loads,
    sync_pairs,
)


class InfeasibleInsertion(ValueError):
    """Raised when applying a candidate that breaks the solution."""


@dataclass(frozen=True)
class Insertion:
    request: int
    delta: float
    k1: int
    i1: int
    j1: int
    transfer: int = -1
    m1: bool = False
    k2: int = -1
    i2: int = -1
    j2: int = -1
    m2: bool = False

    @property
    def direct(self) -> bool:
        return self.transfer < 0


class FeasibilityCache:
    """Earliest/latest starts, longest paths and load ranges of a solution."""

    def __init__(self, instance: Instance, solution: Solution):
        self.instance = instance
        self.solution = solution
        routes = solution.routes
        lens = [len(r) for r in routes]
        self.off = np.zeros(len(routes) + 1, dtype=np.int64)
        self.off[1:] = np.cumsum(lens)
        n = int(self.off[-1])
        self.nloc = np.array([s.loc for r in routes for s in r], dtype=np.int64)
        self.visit = [{s.loc: i for i, s in enumerate(r)} for r in routes]

        tt = instance.tt
        succ = [[] for _ in range(n)]
        for k, r in enumerate(routes):
            o = int(self.off[k])
            for i in range(len(r) - 1):
                succ[o + i].append((o + i + 1, float(tt[r[i].loc, r[i + 1].loc])))
        for (dk, di), (pk, pi) in sync_pairs(routes):
            succ[int(self.off[dk]) + di].append((int(self.off[pk]) + pi, 0.0))
        ptr = np.zeros(n + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(s) for s in succ])
        idx = np.array([m for s in succ for m, _ in s], dtype=np.int64)
        w = np.array([x for s in succ for _, x in s], dtype=np.float64)
        order = _topological_order(succ)
        if order is None:
            raise ValueError("solution has a transfer dependency cycle")
        self.LP = K.longest_paths(order, ptr, idx, w)

        lo = instance.tw_open[self.nloc]
        hi = instance.tw_close[self.nloc]
        self.F = np.max(lo[:, None] + self.LP, axis=0)
        self.B = np.min(hi[None, :] - self.LP, axis=1)
        self.load = np.array([x for r in routes for x in route_loads(instance, r)])
        self.RM = np.full((n, n), -np.inf)
        for k in range(len(routes)):
            a, b = int(self.off[k]), int(self.off[k + 1])
            for s in range(a, b):
                self.RM[s, s:b] = np.maximum.accumulate(self.load[s:b])
        self.feasible = bool(np.all(self.F <= hi + EPS) and np.all(self.load <= instance.capacity + EPS))
        self._scratch = (np.zeros(8, dtype=np.int64), np.zeros(8), np.zeros(8, dtype=np.int64), np.zeros(2, dtype=np.int64))

    def times(self):
        """Earliest starts split per route, comparable to ``compute_schedule``."""
        return [self.F[self.off[k]:self.off[k + 1]].tolist() for k in range(len(self.off) - 1)]

    def _common(self):
        inst = self.instance
        return (self.F, self.B, self.LP, self.RM, self.nloc, inst.tt)


def _topological_order(succ):
    n = len(succ)
    indeg = [0] * n
    for s in succ:
        for m, _ in s:
            indeg[m] += 1
    queue = deque(v for v in range(n) if indeg[v] == 0)
    order = []
    while queue:
        v = queue.popleft()
        order.append(v)
        for m, _ in succ[v]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if len(order) < n:
        return None
    return np.array(order, dtype=np.int64)


# ---------------------------------------------------------------------------
# enumeration


def _pair_cost(c, locs, i, j, p, d):
    a, b = locs[i - 1], locs[i]
    if i == j:
        return c[a, p] + c[p, d] + c[d, b] - c[a, b]
    a2, b2 = locs[j - 1], locs[j]
    return c[a, p] + c[p, b] - c[a, b] + c[a2, d] + c[d, b2] - c[a2, b2]


def _single_cost(c, locs, i, x):
    return c[locs[i - 1], x] + c[x, locs[i]] - c[locs[i - 1], locs[i]]


def enumerate_insertions(instance: Instance, solution: Solution, r: int) -> list[Insertion]:
    """Every structurally valid placement of request ``r`` with its cost delta.

    Feasibility is not checked here; see :func:`check_insertion_feasible`.
    """
    if r in solution.served():
        raise ValueError(f"request {r} is already served")
    req = instance.requests[r]
    p, d = req.pickup, req.delivery
    c = instance.distance
    locs = [[s.loc for s in route] for route in solution.routes]
    out = []
    for k, lk in enumerate(locs):
        L = len(lk)
        for i in range(1, L):
            for j in range(i, L):
                out.append(Insertion(r, float(_pair_cost(c, lk, i, j, p, d)), k, i, j))
    for t in instance.transfer_ids:
        for k1, l1 in enumerate(locs):
            v1 = l1.index(t) if t in l1 else -1
            firsts = []
            if v1 >= 0:
                firsts = [(i1, v1, True, _single_cost(c, l1, i1, p)) for i1 in range(1, v1 + 1)]
            else:
                firsts = [
                    (i1, j1, False, _pair_cost(c, l1, i1, j1, p, t))
                    for i1 in range(1, len(l1)) for j1 in range(i1, len(l1))
                ]
            for k2, l2 in enumerate(locs):
                if k2 == k1:
                    continue
                v2 = l2.index(t) if t in l2 else -1
                if v2 >= 0:
                    seconds = [(v2, j2, True, _single_cost(c, l2, j2, d)) for j2 in range(v2 + 1, len(l2))]
                else:
                    seconds = [
                        (i2, j2, False, _pair_cost(c, l2, i2, j2, t, d))
                        for i2 in range(1, len(l2)) for j2 in range(i2, len(l2))
                    ]
                for i1, j1, m1, c1 in firsts:
                    for i2, j2, m2, c2 in seconds:
                        out.append(Insertion(r, float(c1 + c2), k1, i1, j1, t, m1, k2, i2, j2, m2))
    return out


def check_insertion_feasible(cache: FeasibilityCache, cand: Insertion) -> bool:
    """Exact feasibility of ``cand`` against the cached solution in O(1)."""
    inst = cache.instance
    req = inst.requests[cand.request]
    rb, rT, qa, cnt = cache._scratch
    off = cache.off
    assert 0 <= cand.k1 < len(off) - 1, "candidate does not match the cached solution"
    args = cache._common() + (inst.tw_open, inst.tw_close, float(inst.capacity))
    if cand.direct:
        return bool(K.check_direct(
            *args, int(off[cand.k1]), cand.i1, cand.j1, req.pickup, req.delivery, float(req.qty),
            rb, rT, qa, cnt,
        ))
    return bool(K.check_transfer(
        *args, int(off[cand.k1]), cand.i1, cand.j1, int(cand.m1), cand.transfer,
        int(off[cand.k2]), cand.i2, cand.j2, int(cand.m2), req.pickup, req.delivery, float(req.qty),
        rb, rT, qa, cnt, 0,
    ))


def best_insertions(cache: FeasibilityCache, r: int, m: int, transfers: bool = True) -> list[Insertion]:
    """The ``m`` cheapest feasible insertions of ``r`` (fewer if fewer exist).

    Ties keep enumeration order: direct candidates by vehicle, then
    transfers by (transfer point, first vehicle, second vehicle).
    """
    inst = cache.instance
    req = inst.requests[r]
    p, d, q = req.pickup, req.delivery, float(req.qty)
    bc = np.full(m, np.inf)
    bi = np.zeros((m, 10), dtype=np.int64)
    common = cache._common() + (inst.distance, inst.tw_open, inst.tw_close, float(inst.capacity))
    off = cache.off
    n_routes = len(off) - 1
    n = 0
    for k in range(n_routes):
        o, L = int(off[k]), int(off[k + 1] - off[k])
        n = K.scan_direct(*common, o, L, k, p, d, q, bc, bi, n, m)
    if transfers:
        for t in inst.transfer_ids:
            for k1 in range(n_routes):
                v1 = cache.visit[k1].get(t, -1)
                for k2 in range(n_routes):
                    if k2 == k1:
                        continue
                    v2 = cache.visit[k2].get(t, -1)
                    n = K.scan_transfer(
                        *common,
                        int(off[k1]), int(off[k1 + 1] - off[k1]), k1, v1,
                        int(off[k2]), int(off[k2 + 1] - off[k2]), k2, v2,
                        t, p, d, q, bc, bi, n, m,
                    )
    out = []
    for z in range(n):
        row = [int(x) for x in bi[z]]
        if row[0] == 0:
            out.append(Insertion(r, float(bc[z]), row[1], row[2], row[3]))
        else:
            out.append(Insertion(r, float(bc[z]), row[1], row[2], row[3], row[5], bool(row[4]), row[6], row[7], row[8], bool(row[9])))
    return out


def _merge(stop: Stop, action) -> Stop:
    return Stop(stop.loc, stop.actions + (action,))


def apply_insertion(instance: Instance, solution: Solution, cand: Insertion, check: bool = True) -> Solution:
    """New solution with ``cand`` applied; the cost grows by ``cand.delta``.

    With ``check`` the result is re-scheduled from scratch and an
    :class:`InfeasibleInsertion` is raised if it breaks a window, the
    capacity or synchronization.
    """
    r = cand.request
    req = instance.requests[r]
    routes = [list(route) for route in solution.routes]
    if cand.direct:
        route = routes[cand.k1]
        route.insert(cand.j1, Stop(req.delivery, ((DELIVER, r),)))
        route.insert(cand.i1, Stop(req.pickup, ((PICKUP, r),)))
    else:
        t = cand.transfer
        if cand.k1 == cand.k2:
            raise InfeasibleInsertion("transfer between a vehicle and itself")
        first, second = routes[cand.k1], routes[cand.k2]
        if cand.m1:
            if first[cand.j1].loc != t:
                raise InfeasibleInsertion("merged drop does not point at the transfer visit")
            first[cand.j1] = _merge(first[cand.j1], (DROP, r))
        else:
            if any(s.loc == t for s in first):
                raise InfeasibleInsertion("vehicle already visits the transfer point")
            first.insert(cand.j1, Stop(t, ((DROP, r),)))
        first.insert(cand.i1, Stop(req.pickup, ((PICKUP, r),)))
        second.insert(cand.j2, Stop(req.delivery, ((DELIVER, r),)))
        if cand.m2:
            if second[cand.i2].loc != t:
                raise InfeasibleInsertion("merged pick does not point at the transfer visit")
            second[cand.i2] = _merge(second[cand.i2], (PICK, r))
        else:
            if any(s.loc == t for s in second):
                raise InfeasibleInsertion("vehicle already visits the transfer point")
            second.insert(cand.i2, Stop(t, ((PICK, r),)))
    new = Solution(routes, solution.objective(instance) + cand.delta)
    if check:
        sched = compute_schedule(instance, new)
        overload = any(
            x > instance.capacity + EPS for route in routes for x in route_loads(instance, route)
        )
        if not sched.feasible or overload:
            raise InfeasibleInsertion(f"insertion of request {r} is infeasible: {sched.evidence or 'capacity'}")
    return new


def insert_cheapest(instance: Instance, solution: Solution, order, transfers: bool = True):
    """Cheapest feasible insertion of each request in ``order``; ``None`` if one fails."""
    for r in order:
        cache = FeasibilityCache(instance, solution)
        best = best_insertions(cache, r, 1, transfers)
        if not best:
            return None
        solution = apply_insertion(instance, solution, best[0], check=False)
    return solution


__all__ = [
    "FeasibilityCache",
    "InfeasibleInsertion",
    "Insertion",
    "apply_insertion",
    "best_insertions",
    "check_insertion_feasible",
    "enumerate_insertions",
    "insert_cheapest",
]
