"""Exhaustive exact solver for tiny instances.

Every request is served either directly by one vehicle or through one
transfer point by two different vehicles. For each assignment of these
modes the vehicles' visit orders are enumerated exhaustively (windows and
capacity are checked per vehicle, ignoring hand-overs), and combinations
are then checked with the full synchronized schedule. Assignments are
visited by increasing lower bound so the search can stop early.
"""
from __future__ import annotations

import itertools
from functools import lru_cache

from ..model import Instance
from ..routing import (
    DELIVER,
    DROP,
    EPS,
    END,
    PICK,
    PICKUP,
    START,
    Solution,
    Stop,
    compute_schedule,
    validate_solution,
)

MAX_REQUESTS = 5
MAX_VEHICLES = 3
MAX_TRANSFERS = 2


class OracleSizeError(ValueError):
    pass


class OracleInfeasible(RuntimeError):
    pass


def journey_modes(instance: Instance):
    K = range(len(instance.vehicles))
    modes = [("direct", k) for k in K]
    for t in instance.transfer_ids:
        modes += [("transfer", t, k1, k2) for k1 in K for k2 in K if k1 != k2]
    return modes


def _vehicle_tasks(instance: Instance, assignment):
    """Per-vehicle visit specs: {loc: actions} plus precedence pairs."""
    n_veh = len(instance.vehicles)
    visits = [dict() for _ in range(n_veh)]
    prec = [set() for _ in range(n_veh)]
    for r, mode in enumerate(assignment):
        req = instance.requests[r]
        if mode[0] == "direct":
            k = mode[1]
            visits[k][req.pickup] = ((PICKUP, r),)
            visits[k][req.delivery] = ((DELIVER, r),)
            prec[k].add((req.pickup, req.delivery))
        else:
            _, t, k1, k2 = mode
            visits[k1][req.pickup] = ((PICKUP, r),)
            visits[k1][t] = visits[k1].get(t, ()) + ((DROP, r),)
            prec[k1].add((req.pickup, t))
            visits[k2][t] = visits[k2].get(t, ()) + ((PICK, r),)
            visits[k2][req.delivery] = ((DELIVER, r),)
            prec[k2].add((t, req.delivery))
    keys = []
    for k in range(n_veh):
        items = tuple(sorted((loc, tuple(sorted(acts, key=lambda a: (a[0], a[1])))) for loc, acts in visits[k].items()))
        keys.append((items, tuple(sorted(prec[k]))))
    return keys


class _Enumerator:
    def __init__(self, instance: Instance):
        self.inst = instance
        self.qty = [r.qty for r in instance.requests]

    @lru_cache(maxsize=None)
    def orders(self, k: int, key):
        """All window- and capacity-feasible visit orders for vehicle k, cheapest first."""
        inst = self.inst
        items, prec = key
        acts = dict(items)
        locs = list(acts)
        preds = {loc: {a for a, b in prec if b == loc} for loc in locs}
        delta = {
            loc: sum(self.qty[r] if kind in (PICKUP, PICK) else -self.qty[r] for kind, r in acts[loc])
            for loc in locs
        }
        veh = inst.vehicles[k]
        tt, c, lo, hi = inst.tt, inst.distance, inst.tw_open, inst.tw_close
        cap = inst.capacity
        out = []

        def dfs(last, time, load, cost, done, seq):
            if len(seq) == len(locs):
                end = max(lo[veh.destination], time + tt[last, veh.destination])
                if end <= hi[veh.destination] + EPS:
                    out.append((cost + c[last, veh.destination], tuple(seq)))
                return
            for loc in locs:
                if loc in done or not preds[loc] <= done:
                    continue
                a = max(lo[loc], time + tt[last, loc])
                if a > hi[loc] + EPS:
                    continue
                new_load = load + delta[loc]
                if new_load > cap + EPS:
                    continue
                done.add(loc)
                seq.append(loc)
                dfs(loc, a, new_load, cost + c[last, loc], done, seq)
                seq.pop()
                done.remove(loc)

        dfs(veh.origin, float(lo[veh.origin]), 0.0, 0.0, set(), [])
        out.sort()
        return out


def exact_oracle_solve(instance: Instance, check: bool = True) -> Solution:
    """Minimum-distance feasible solution by exhaustive enumeration."""
    nR, nK, nT = len(instance.requests), len(instance.vehicles), len(instance.transfer_ids)
    if nR > MAX_REQUESTS or nK > MAX_VEHICLES or nT > MAX_TRANSFERS:
        raise OracleSizeError(
            f"oracle limited to |R|<={MAX_REQUESTS}, |K|<={MAX_VEHICLES}, |T|<={MAX_TRANSFERS}; "
            f"got {nR}, {nK}, {nT}"
        )
    en = _Enumerator(instance)
    modes = journey_modes(instance)
    scored = []
    for assignment in itertools.product(modes, repeat=nR):
        keys = _vehicle_tasks(instance, assignment)
        lists = [en.orders(k, key) for k, key in enumerate(keys)]
        if any(not lst for lst in lists):
            continue
        scored.append((sum(lst[0][0] for lst in lists), assignment, lists, keys))
    scored.sort(key=lambda x: x[0])

    best_cost, best_routes = float("inf"), None
    for lb, assignment, lists, keys in scored:
        if lb >= best_cost - 1e-9:
            break
        synced = any(m[0] == "transfer" for m in assignment)
        cost, routes = _best_combination(instance, lists, keys, synced, best_cost)
        if routes is not None and cost < best_cost - 1e-9:
            best_cost, best_routes = cost, routes
    if best_routes is None:
        raise OracleInfeasible("instance has no feasible solution")
    sol = Solution(best_routes)
    sol.objective(instance)
    if check:
        report = validate_solution(instance, sol)
        assert not report, report
    return sol


def _build_routes(instance, seqs, keys):
    routes = []
    for k, seq in enumerate(seqs):
        veh = instance.vehicles[k]
        acts = dict(keys[k][0])
        routes.append(
            [Stop(veh.origin, ((START, None),))]
            + [Stop(loc, acts[loc]) for loc in seq]
            + [Stop(veh.destination, ((END, None),))]
        )
    return routes


def _best_combination(instance, lists, keys, synced, incumbent):
    mins = [lst[0][0] for lst in lists]
    suffix = [0.0] * (len(lists) + 1)
    for k in range(len(lists) - 1, -1, -1):
        suffix[k] = suffix[k + 1] + mins[k]
    if not synced:
        seqs = [lst[0][1] for lst in lists]
        return suffix[0], _build_routes(instance, seqs, keys)

    best = [incumbent, None]
    chosen = []

    def rec(k, cost):
        if k == len(lists):
            routes = _build_routes(instance, [s for _, s in chosen], keys)
            if compute_schedule(instance, routes).feasible:
                best[0], best[1] = cost, routes
            return
        for ck, seq in lists[k]:
            if cost + ck + suffix[k + 1] >= best[0] - 1e-9:
                break
            chosen.append((ck, seq))
            rec(k + 1, cost + ck)
            chosen.pop()

    rec(0, 0.0)
    return best[0], best[1]
