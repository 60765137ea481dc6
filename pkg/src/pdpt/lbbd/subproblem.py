"""Subproblem: route the vehicles so that every master edge is driven once.

The master edges split into segments: maximal chains whose inner
locations are not transfer points. A segment is driven by one vehicle from
end to end, so the built-in solver assigns segments to vehicles, orders
each vehicle's segments, and checks the synchronized schedule. The MILP
form is built by :func:`build_subproblem` for external solvers.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..milp.model import BINARY, CONTINUOUS, MilpModel
from ..model import Instance
from ..routing import DELIVER, DROP, END, EPS, PICK, PICKUP, START, Solution, Stop, compute_schedule


@dataclass
class SubproblemResult:
    feasible: bool
    cost: float = float("inf")
    solution: Solution | None = None
    reason: str = ""
    checked: int = 0


def segments(instance: Instance, edges) -> list | None:
    """Split ``edges`` into chains; ``None`` when no routing can contain them."""
    T = instance.transfer_set
    succ, pred = {}, {}
    for i, j in edges:
        if i not in T and i in succ or j not in T and j in pred:
            return None
        succ.setdefault(i, []).append(j)
        pred.setdefault(j, []).append(i)
    used = set()
    out = []
    for i, j in sorted(edges):
        if (i, j) in used or (i not in T and i in pred):
            continue
        seg = [i, j]
        used.add((i, j))
        while seg[-1] not in T and seg[-1] in succ:
            nxt = succ[seg[-1]][0]
            used.add((seg[-1], nxt))
            seg.append(nxt)
            if len(seg) > len(instance.locations) + 1:
                return None
        out.append(tuple(seg))
    if len(used) != len(set(edges)):
        return None  # a loop through non-transfer locations only
    for seg in out:
        if len(set(seg)) != len(seg):
            return None
    return out


def actions_for(instance: Instance, paths: dict, owner: dict, routes_locs):
    """Stops with actions for location sequences, given the vehicle on each edge."""
    T = instance.transfer_set
    acts = [dict() for _ in routes_locs]
    pos = [{loc: i for i, loc in enumerate(locs)} for locs in routes_locs]
    for r, path in paths.items():
        k0 = owner[(path[0], path[1])]
        acts[k0].setdefault(path[0], []).append((PICKUP, r))
        k1 = owner[(path[-2], path[-1])]
        acts[k1].setdefault(path[-1], []).append((DELIVER, r))
        for h in range(1, len(path) - 1):
            t = path[h]
            if t not in T:
                continue
            k_in, k_out = owner[(path[h - 1], t)], owner[(t, path[h + 1])]
            if k_in != k_out:
                acts[k_in].setdefault(t, []).append((DROP, r))
                acts[k_out].setdefault(t, []).append((PICK, r))
    routes = []
    for k, locs in enumerate(routes_locs):
        stops = [Stop(locs[0], ((START, None),))]
        for loc in locs[1:-1]:
            a = acts[k].get(loc, [])
            if not a:
                # the vehicle only carries requests through this transfer
                through = [r for r, path in paths.items() if loc in path[1:-1] and owner[(path[path.index(loc) - 1], loc)] == k]
                a = [(DROP, through[0]), (PICK, through[0])] if through else []
            stops.append(Stop(loc, tuple(a)))
        stops.append(Stop(locs[-1], ((END, None),)))
        routes.append(stops)
    return routes


class _Orders:
    """Window-feasible segment orders for one vehicle, cheapest first."""

    def __init__(self, instance: Instance, segs, edge_set):
        self.inst = instance
        self.segs = segs
        self.edge_set = edge_set
        self.cache = {}

    def get(self, k: int, subset: tuple):
        key = (k, subset)
        if key not in self.cache:
            self.cache[key] = self._enumerate(k, subset)
        return self.cache[key]

    def _enumerate(self, k, subset):
        inst = self.inst
        veh = inst.vehicles[k]
        tt, c, lo, hi = inst.tt, inst.distance, inst.tw_open, inst.tw_close
        segs = self.segs
        out = []

        def extend(locs, time, cost, seg):
            # append one segment; glue on a shared transfer endpoint
            start = 1 if seg[0] == locs[-1] else 0
            if start == 0 and (locs[-1], seg[0]) in self.edge_set:
                return None
            new = list(locs)
            for loc in seg[start:]:
                if loc in new:
                    return None
                time = max(float(lo[loc]), time + float(tt[new[-1], loc]))
                if time > hi[loc] + EPS:
                    return None
                cost += float(c[new[-1], loc])
                new.append(loc)
            return new, time, cost

        def dfs(locs, time, cost, left):
            if not left:
                if (locs[-1], veh.destination) in self.edge_set:
                    return
                end = max(float(lo[veh.destination]), time + float(tt[locs[-1], veh.destination]))
                if end <= hi[veh.destination] + EPS:
                    out.append((cost + float(c[locs[-1], veh.destination]), tuple(locs + [veh.destination])))
                return
            for s in left:
                nxt = extend(locs, time, cost, segs[s])
                if nxt is not None:
                    dfs(nxt[0], nxt[1], nxt[2], tuple(x for x in left if x != s))

        dfs([veh.origin], float(lo[veh.origin]), 0.0, subset)
        out.sort()
        return out


def solve_subproblem(instance: Instance, paths: dict, edges) -> SubproblemResult:
    """Cheapest routing that drives every edge of ``edges`` exactly once.

    ``paths`` maps each request to its location sequence; together with the
    vehicle chosen for each edge it fixes pickups, deliveries and the
    hand-overs at transfer points.
    """
    edges = tuple(sorted(set(edges)))
    segs = segments(instance, edges)
    if segs is None:
        return SubproblemResult(False, reason="edges cannot be split into drivable chains")
    K = len(instance.vehicles)
    edge_set = set(edges)
    orders = _Orders(instance, segs, edge_set)
    best = [np.inf, None]
    checked = 0
    for assign in itertools.product(range(K), repeat=len(segs)):
        subsets = [tuple(s for s in range(len(segs)) if assign[s] == k) for k in range(K)]
        lists = [orders.get(k, sub) for k, sub in enumerate(subsets)]
        if any(not lst for lst in lists):
            continue
        lower = sum(lst[0][0] for lst in lists)
        if lower >= best[0] - 1e-9:
            continue
        owner = {}
        for s, k in enumerate(assign):
            for e in zip(segs[s][:-1], segs[s][1:]):
                owner[e] = k
        suffix = np.zeros(K + 1)
        for k in range(K - 1, -1, -1):
            suffix[k] = suffix[k + 1] + lists[k][0][0]
        chosen = []

        def rec(k, cost):
            nonlocal checked
            if k == K:
                checked += 1
                routes = actions_for(instance, paths, owner, [locs for _, locs in chosen])
                if compute_schedule(instance, routes).feasible:
                    best[0], best[1] = cost, routes
                return
            for ck, locs in lists[k]:
                if cost + ck + suffix[k + 1] >= best[0] - 1e-9:
                    break
                chosen.append((ck, locs))
                rec(k + 1, cost + ck)
                chosen.pop()

        rec(0, 0.0)
    if best[1] is None:
        return SubproblemResult(False, reason="no synchronized schedule", checked=checked)
    sol = Solution(best[1])
    return SubproblemResult(True, sol.objective(instance), sol, checked=checked)


# ---------------------------------------------------------------------------
# MILP form


@dataclass
class SubproblemModel:
    instance: Instance
    model: MilpModel
    x: dict = field(default_factory=dict)  # (i, j, k) -> var
    a: dict = field(default_factory=dict)  # (j, k) -> var


def build_subproblem(instance: Instance, edges, tau: dict) -> SubproblemModel:
    """Vehicle-indexed routing model over the fixed edges ``edges``.

    Coverage of pickups and deliveries is counted over the whole fleet, and
    vehicles never touch other vehicles' depots.
    """
    n = len(instance.locations)
    K = len(instance.vehicles)
    tt, c, lo, hi = instance.tt, instance.distance, instance.tw_open, instance.tw_close
    m = MilpModel(name=f"sub_{instance.name}")
    sm = SubproblemModel(instance, m)
    foreign = [
        {v.origin for v in instance.vehicles if v.id != k} | {v.destination for v in instance.vehicles if v.id != k}
        for k in range(K)
    ]
    for k in range(K):
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                ub = 0.0 if i in foreign[k] or j in foreign[k] else 1.0
                sm.x[(i, j, k)] = m.add_var(f"x_{i}_{j}_{k}", 0.0, ub, BINARY, obj=float(c[i, j]))
    for k in range(K):
        for j in range(n):
            sm.a[(j, k)] = m.add_var(f"a_{j}_{k}", float(lo[j]), float(hi[j]), CONTINUOUS)
    X = sm.x
    depots = {v.origin for v in instance.vehicles} | {v.destination for v in instance.vehicles}
    for k, veh in enumerate(instance.vehicles):
        o, e = veh.origin, veh.destination
        m.add_constraint([(X[(o, j, k)], 1.0) for j in range(n) if j != o], "==", 1.0, f"leave_origin_{k}")
        m.add_constraint([(X[(j, e, k)], 1.0) for j in range(n) if j != e], "==", 1.0, f"reach_destination_{k}")
        m.add_constraint([(X[(j, o, k)], 1.0) for j in range(n) if j != o], "==", 0.0, f"no_return_{k}")
        m.add_constraint([(X[(e, j, k)], 1.0) for j in range(n) if j != e], "==", 0.0, f"no_leave_{k}")
        for j in range(n):
            m.add_constraint([(X[(i, j, k)], 1.0) for i in range(n) if i != j], "<=", 1.0, f"visit_{j}_{k}")
            if j not in depots:
                m.add_constraint(
                    [(X[(i, j, k)], 1.0) for i in range(n) if i != j] + [(X[(j, i, k)], -1.0) for i in range(n) if i != j],
                    "==", 0.0, f"flow_{j}_{k}",
                )
    for r in instance.requests:
        m.add_constraint(
            [(X[(r.pickup, j, k)], 1.0) for k in range(K) for j in range(n) if j != r.pickup], "==", 1.0, f"cover_p_{r.id}"
        )
        m.add_constraint(
            [(X[(j, r.delivery, k)], 1.0) for k in range(K) for j in range(n) if j != r.delivery], "==", 1.0, f"cover_d_{r.id}"
        )
    for i, j in sorted(set(edges)):
        m.add_constraint([(X[(i, j, k)], 1.0) for k in range(K)], "==", 1.0, f"keep_{i}_{j}")
    for k in range(K):
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                M = float(tt[i, j] + hi[i])
                m.add_constraint(
                    [(sm.a[(i, k)], 1.0), (sm.a[(j, k)], -1.0), (X[(i, j, k)], M)], "<=", M - float(tt[i, j]), f"time_{i}_{j}_{k}"
                )
    for r in instance.requests:
        for k in range(K):
            m.add_constraint([(sm.a[(r.pickup, k)], 1.0), (sm.a[(r.delivery, k)], -1.0)], "<=", 0.0, f"precede_{r.id}_{k}")
    seen = set()
    for r, triples in sorted(tau.items()):
        for i, t, j in triples:
            for k in range(K):
                for l in range(K):
                    if k == l or (i, t, j, k, l) in seen:
                        continue
                    seen.add((i, t, j, k, l))
                    U = float(hi[t])
                    m.add_constraint(
                        [(sm.a[(t, k)], 1.0), (sm.a[(t, l)], -1.0), (X[(i, t, k)], U), (X[(t, j, l)], U)],
                        "<=", 2.0 * U, f"sync_{i}_{t}_{j}_{k}_{l}",
                    )
    return sm


def decode_subproblem(sm: SubproblemModel, values, paths: dict) -> Solution:
    """Routes from an integral subproblem assignment."""
    inst = sm.instance
    values = np.asarray(values, dtype=float)
    succ = {}
    owner = {}
    for (i, j, k), v in sm.x.items():
        if values[v] > 0.5:
            succ[(i, k)] = j
            owner[(i, j)] = k
    routes_locs = []
    for k, veh in enumerate(inst.vehicles):
        locs = [veh.origin]
        while locs[-1] != veh.destination:
            locs.append(succ[(locs[-1], k)])
            if len(locs) > len(inst.locations) + 1:
                raise RuntimeError(f"vehicle {k} route does not reach its destination")
        routes_locs.append(locs)
    routes = actions_for(inst, paths, owner, routes_locs)
    sol = Solution(routes)
    sol.objective(inst)
    return sol
