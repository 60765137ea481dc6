"""Solutions with transfers: structure, schedules, validation and removal.

A route is a list of :class:`Stop`. A stop is one visit of a vehicle to a
location and carries one or more actions. Transfer visits may carry several
drops and picks that all happen at the visit's service start.

Journeys are not stored; they are traced from the actions (see
:func:`trace_journeys`), so the stop lists are the single source of truth.
"""
from __future__ import annotations

import heapq
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .model import Instance

START = "start"
END = "end"
PICKUP = "pickup"
DELIVER = "deliver"
DROP = "transfer_drop"
PICK = "transfer_pick"
ACTIONS = (START, END, PICKUP, DELIVER, DROP, PICK)

EPS = 1e-9


@dataclass(frozen=True)
class Stop:
    loc: int
    actions: tuple = ()

    @property
    def requests(self):
        return [r for _, r in self.actions if r is not None]

    def load_change(self, qty) -> float:
        delta = 0.0
        for kind, r in self.actions:
            if kind in (PICKUP, PICK):
                delta += qty[r]
            elif kind in (DELIVER, DROP):
                delta -= qty[r]
        return delta

    def without(self, removed) -> "Stop":
        return Stop(self.loc, tuple(a for a in self.actions if a[1] not in removed))


def empty_route(instance: Instance, k: int) -> list[Stop]:
    veh = instance.vehicles[k]
    return [Stop(veh.origin, ((START, None),)), Stop(veh.destination, ((END, None),))]


@dataclass(frozen=True)
class Leg:
    vehicle: int
    src: int
    dst: int


@dataclass
class Solution:
    routes: list
    cost: float | None = None

    @classmethod
    def empty(cls, instance: Instance) -> "Solution":
        routes = [empty_route(instance, k) for k in range(len(instance.vehicles))]
        return cls(routes, evaluate(instance, routes))

    def copy(self) -> "Solution":
        return Solution([list(r) for r in self.routes], self.cost)

    def served(self) -> set:
        return {r for route in self.routes for s in route for r in s.requests}

    def objective(self, instance: Instance) -> float:
        if self.cost is None:
            self.cost = evaluate(instance, self.routes)
        return self.cost


def evaluate(instance: Instance, solution) -> float:
    """Total distance over all routes, unused vehicles included."""
    routes = solution.routes if isinstance(solution, Solution) else solution
    c = instance.distance
    total = 0.0
    for route in routes:
        locs = [s.loc for s in route]
        if len(locs) > 1:
            total += float(c[locs[:-1], locs[1:]].sum())
    return total


def route_loads(instance: Instance, route) -> list[float]:
    qty = [r.qty for r in instance.requests]
    loads, cur = [], 0.0
    for s in route:
        cur += s.load_change(qty)
        loads.append(cur)
    return loads


# ---------------------------------------------------------------------------
# journeys


def _action_index(routes):
    """Map (kind, request) -> list of (vehicle, stop index)."""
    idx = defaultdict(list)
    for k, route in enumerate(routes):
        for i, s in enumerate(route):
            for kind, r in s.actions:
                if r is not None:
                    idx[(kind, r)].append((k, i))
    return idx


def trace_journeys(instance: Instance, solution: Solution):
    """Follow every request from pickup to delivery.

    Returns ``(journeys, problems)``. ``journeys[r]`` is a list of legs, and
    ``problems`` lists ``(property, request, message)`` for requests whose
    actions do not form a single pickup-to-delivery chain.
    """
    routes = solution.routes
    idx = _action_index(routes)
    journeys, problems = {}, []
    for req in instance.requests:
        r = req.id
        picks = idx.get((PICKUP, r), [])
        if len(picks) != 1:
            problems.append(("pdpt2", r, f"pickup action appears {len(picks)} times"))
            continue
        k, i = picks[0]
        if routes[k][i].loc != req.pickup:
            problems.append(("pdpt2", r, "pickup action at the wrong location"))
            continue
        legs, used, ok = [], {(PICKUP, k, i)}, False
        src = req.pickup
        while True:
            nxt = None
            for i2 in range(i + 1, len(routes[k])):
                for kind, rr in routes[k][i2].actions:
                    if rr == r and kind in (DELIVER, DROP):
                        nxt = (kind, i2)
                        break
                if nxt:
                    break
            if nxt is None:
                problems.append(("pdpt3", r, f"no delivery or drop after loading on vehicle {k}"))
                break
            kind, i2 = nxt
            loc = routes[k][i2].loc
            legs.append(Leg(k, src, loc))
            used.add((kind, k, i2))
            if kind == DELIVER:
                if loc != req.delivery:
                    problems.append(("pdpt2", r, "delivery action at the wrong location"))
                    break
                ok = True
                break
            if loc not in instance.transfer_set:
                problems.append(("pdpt4", r, f"drop at non-transfer location {loc}"))
                break
            partners = [(kk, ii) for kk, ii in idx.get((PICK, r), []) if routes[kk][ii].loc == loc and (PICK, kk, ii) not in used]
            if len(partners) != 1:
                problems.append(("pdpt4", r, f"drop at transfer {loc} has {len(partners)} matching picks"))
                break
            k, i = partners[0]
            used.add((PICK, k, i))
            src = loc
        if not ok:
            continue
        n_actions = sum(len(v) for key, v in idx.items() if key[1] == r)
        if n_actions != len(used):
            problems.append(("pdpt2", r, "request has actions outside its journey"))
            continue
        journeys[r] = legs
    return journeys, problems


# ---------------------------------------------------------------------------
# schedule


@dataclass
class Schedule:
    feasible: bool
    times: list = field(default_factory=list)
    cycle: list = field(default_factory=list)
    late: list = field(default_factory=list)

    @property
    def evidence(self):
        if self.cycle:
            return {"cycle": self.cycle}
        if self.late:
            return {"late": self.late}
        return None


def sync_pairs(routes):
    """(drop node, pick node) for every transfer hand-over, as (k, i) pairs."""
    drops, picks = {}, defaultdict(list)
    for k, route in enumerate(routes):
        for i, s in enumerate(route):
            for kind, r in s.actions:
                if kind == DROP:
                    drops.setdefault((r, s.loc), []).append((k, i))
                elif kind == PICK:
                    picks[(r, s.loc)].append((k, i))
    pairs = []
    for key, dnodes in drops.items():
        for dn in dnodes:
            for pn in picks.get(key, []):
                if pn != dn:
                    pairs.append((dn, pn))
    return pairs


def compute_schedule(instance: Instance, solution) -> Schedule:
    """Earliest-start schedule with transfer synchronization.

    Every visit starts as early as its window and all its predecessors
    allow. Predecessors are the previous stop on the route (plus service and
    travel) and, for a transfer pick, the visit where the request was
    dropped. A dependency cycle has no schedule at all.
    """
    routes = solution.routes if isinstance(solution, Solution) else solution
    tt, lo, hi = instance.tt, instance.tw_open, instance.tw_close
    nodes = [(k, i) for k, route in enumerate(routes) for i in range(len(route))]
    succ = defaultdict(list)
    indeg = {n: 0 for n in nodes}
    for k, route in enumerate(routes):
        for i in range(len(route) - 1):
            w = float(tt[route[i].loc, route[i + 1].loc])
            succ[(k, i)].append(((k, i + 1), w))
            indeg[(k, i + 1)] += 1
    for dn, pn in sync_pairs(routes):
        succ[dn].append((pn, 0.0))
        indeg[pn] += 1

    # Kahn's algorithm with the ready set ordered by (vehicle, stop)
    ready = [n for n in nodes if indeg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m, _ in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    if len(order) < len(nodes):
        return Schedule(False, cycle=_find_cycle(nodes, succ, set(order)))

    a = {n: float(lo[routes[n[0]][n[1]].loc]) for n in nodes}
    for n in order:
        for m, w in succ[n]:
            if a[n] + w > a[m]:
                a[m] = a[n] + w
    times = [[a[(k, i)] for i in range(len(route))] for k, route in enumerate(routes)]
    late = [
        (k, i, route[i].loc, times[k][i], float(hi[route[i].loc]))
        for k, route in enumerate(routes)
        for i in range(len(route))
        if times[k][i] > hi[route[i].loc] + EPS
    ]
    return Schedule(not late, times=times, late=late)


def _find_cycle(nodes, succ, done):
    # Every node Kahn could not emit has a predecessor that was not emitted
    # either, so walking predecessors inside the leftover set must close a
    # cycle.
    pred = defaultdict(list)
    for n in nodes:
        if n in done:
            continue
        for m, _ in succ[n]:
            if m not in done:
                pred[m].append(n)
    n = next(n for n in nodes if n not in done)
    seen, path = {}, []
    while n not in seen:
        seen[n] = len(path)
        path.append(n)
        n = min(pred[n])
    cycle = path[seen[n]:]
    cycle.reverse()
    return cycle


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class SolutionViolation:
    prop: str
    message: str

    def __str__(self):
        return f"({self.prop}) {self.message}"


def validate_solution(instance: Instance, solution: Solution) -> list[SolutionViolation]:
    """Check routes, coverage, precedence, transfers, capacity and windows."""
    out: list[SolutionViolation] = []
    routes = solution.routes
    K = len(instance.vehicles)
    if len(routes) != K:
        return [SolutionViolation("pdpt1", f"{len(routes)} routes for {K} vehicles")]
    depots = {v.origin for v in instance.vehicles} | {v.destination for v in instance.vehicles}
    for k, route in enumerate(routes):
        veh = instance.vehicles[k]
        if len(route) < 2 or route[0].loc != veh.origin or route[-1].loc != veh.destination:
            out.append(SolutionViolation("pdpt1", f"vehicle {k} does not run from its origin to its destination"))
            continue
        if route[0].actions != ((START, None),) or route[-1].actions != ((END, None),):
            out.append(SolutionViolation("pdpt1", f"vehicle {k} depot stops carry wrong actions"))
        locs = [s.loc for s in route]
        if len(set(locs)) != len(locs):
            out.append(SolutionViolation("pdpt1", f"vehicle {k} visits a location twice"))
        for i, s in enumerate(route[1:-1], start=1):
            if s.loc in depots:
                out.append(SolutionViolation("pdpt1", f"vehicle {k} visits depot {s.loc} mid-route"))
            if not s.actions:
                out.append(SolutionViolation("pdpt1", f"vehicle {k} stop {i} has no action"))
            for kind, r in s.actions:
                if kind not in (PICKUP, DELIVER, DROP, PICK) or r is None or not 0 <= r < len(instance.requests):
                    out.append(SolutionViolation("pdpt1", f"vehicle {k} stop {i} has bad action {kind!r}"))
                elif kind in (DROP, PICK) and s.loc not in instance.transfer_set:
                    out.append(SolutionViolation("pdpt4", f"request {r} transferred at non-transfer {s.loc}"))
    if out:
        return out

    journeys, problems = trace_journeys(instance, solution)
    for prop, r, msg in problems:
        out.append(SolutionViolation(prop, f"request {r}: {msg}"))
    visits = defaultdict(int)
    for route in routes:
        for s in route:
            visits[s.loc] += 1
    for req in instance.requests:
        for j in (req.pickup, req.delivery):
            if visits[j] != 1:
                out.append(SolutionViolation("pdpt2", f"location {j} of request {req.id} visited {visits[j]} times"))
    q = instance.capacity
    for k, route in enumerate(routes):
        for i, load in enumerate(route_loads(instance, route)):
            if load > q + EPS:
                out.append(SolutionViolation("pdpt5", f"vehicle {k} carries {load:g} > {q:g} after stop {i}"))
            elif load < -EPS:
                out.append(SolutionViolation("pdpt3", f"vehicle {k} unloads cargo it does not carry at stop {i}"))

    sched = compute_schedule(instance, routes)
    if sched.cycle:
        out.append(SolutionViolation("pdpt4", f"transfer dependency cycle {sched.cycle}"))
    else:
        for k, i, loc, a, u in sched.late:
            out.append(SolutionViolation("pdpt6", f"vehicle {k} starts at location {loc} at {a:.4f} > {u:g}"))
        for (dk, di), (pk, pi) in sync_pairs(routes):
            if sched.times[pk][pi] + EPS < sched.times[dk][di]:  # pragma: no cover - implied by the schedule
                out.append(SolutionViolation("pdpt4", f"pick at {routes[pk][pi].loc} before drop"))
    if solution.cost is not None and abs(solution.cost - evaluate(instance, routes)) > 1e-6:
        out.append(SolutionViolation("objective", "cached cost differs from route distance"))
    return out


# ---------------------------------------------------------------------------
# edits


def remove_requests(instance: Instance, solution: Solution, requests) -> Solution:
    """Strip every action of ``requests``; visits left without actions go away."""
    removed = set(requests)
    unknown = [r for r in removed if not 0 <= r < len(instance.requests)]
    if unknown:
        raise KeyError(f"unknown request ids {sorted(unknown)}")
    c = instance.distance
    cost = solution.objective(instance)
    routes = []
    for route in solution.routes:
        new = [route[0]]
        for s in route[1:-1]:
            if not any(r in removed for _, r in s.actions):
                new.append(s)
                continue
            s2 = s.without(removed)
            if s2.actions:
                new.append(s2)
        new.append(route[-1])
        if len(new) != len(route):
            cost += float(c[[s.loc for s in new[:-1]], [s.loc for s in new[1:]]].sum())
            cost -= float(c[[s.loc for s in route[:-1]], [s.loc for s in route[1:]]].sum())
        routes.append(new)
    return Solution(routes, cost)


# ---------------------------------------------------------------------------
# JSON


def solution_to_dict(instance: Instance, solution: Solution) -> dict:
    sched = compute_schedule(instance, solution)
    journeys, _ = trace_journeys(instance, solution)
    routes = []
    for k, route in enumerate(solution.routes):
        stops = []
        for i, s in enumerate(route):
            time = sched.times[k][i] if sched.times else None
            for kind, r in s.actions:
                entry = {"loc": s.loc, "action": kind}
                if r is not None:
                    entry["request"] = r
                entry["time"] = time
                stops.append(entry)
        routes.append({"vehicle": k, "stops": stops})
    return {
        "objective": solution.objective(instance),
        "routes": routes,
        "journeys": [
            {
                "request": r,
                "mode": "direct" if len(legs) == 1 else "transferred",
                "legs": [{"vehicle": leg.vehicle, "from": leg.src, "to": leg.dst} for leg in legs],
            }
            for r, legs in sorted(journeys.items())
        ],
    }


def solution_from_dict(doc: dict) -> Solution:
    routes = []
    for raw in sorted(doc["routes"], key=lambda d: d["vehicle"]):
        stops: list[Stop] = []
        for entry in raw["stops"]:
            act = (entry["action"], entry.get("request"))
            if act[0] not in ACTIONS:
                raise ValueError(f"unknown action {act[0]!r}")
            if stops and stops[-1].loc == entry["loc"]:
                stops[-1] = Stop(stops[-1].loc, stops[-1].actions + (act,))
            else:
                stops.append(Stop(int(entry["loc"]), (act,)))
        routes.append(stops)
    cost = doc.get("objective")
    return Solution(routes, None if cost is None else float(cost))


def save_solution(instance: Instance, solution: Solution, path) -> None:
    doc = solution_to_dict(instance, solution)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_solution(path) -> Solution:
    return solution_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def solution_signature(solution: Solution) -> tuple:
    """Hashable form of the routes, handy for equality checks in tests."""
    return tuple(tuple((s.loc, s.actions) for s in route) for route in solution.routes)

