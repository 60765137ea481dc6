"""Small random instances and solutions shared by the tests."""
from __future__ import annotations

import math

import numpy as np

from pdpt.insertion import apply_insertion, enumerate_insertions, insert_cheapest
from pdpt.model import (
    DELIVERY,
    DEPOT_DESTINATION,
    DEPOT_ORIGIN,
    PICKUP,
    TRANSFER,
    Instance,
    Location,
    Request,
    Vehicle,
)
from pdpt.operators import insertion_difficulty, order_by
from pdpt.routing import Solution, compute_schedule, route_loads


def random_instance(rng, n_req=4, n_veh=2, n_tr=1, size=100.0, width=(60, 240), horizon=480.0,
                    service=(0, 5), qty=(5, 40), cap=60.0, name="rand"):
    """Euclidean instance on a ``size`` x ``size`` hectometer square."""
    locs = []

    def add(kind, tw=None, st=0.0):
        x, y = rng.uniform(0, size, 2)
        if tw is None:
            tw = (0.0, horizon)
        locs.append(Location(len(locs), kind, float(x), float(y), float(tw[0]), float(tw[1]), float(st)))
        return len(locs) - 1

    origins = [add(DEPOT_ORIGIN) for _ in range(n_veh)]
    dests = [add(DEPOT_DESTINATION) for _ in range(n_veh)]
    reqs = []
    for r in range(n_req):
        ids = []
        for kind in (PICKUP, DELIVERY):
            w = rng.uniform(*width)
            a = rng.uniform(0, horizon - w)
            ids.append(add(kind, (round(a), round(a + w)), float(rng.integers(service[0], service[1] + 1))))
        reqs.append(Request(r, ids[0], ids[1], float(rng.integers(qty[0], qty[1] + 1))))
    transfers = [add(TRANSFER) for _ in range(n_tr)]
    vehicles = [Vehicle(k, origins[k], dests[k], cap) for k in range(n_veh)]
    return Instance(name, locs, reqs, vehicles, transfers, "euclidean", 20.0, horizon)


def build(points, kinds, requests, vehicles, transfers=(), windows=None, service=None, qty=10.0, cap=75.0):
    """Hand-placed Euclidean fixture; ``qty`` may be a scalar or one value per request."""
    locs = []
    for j, ((x, y), kind) in enumerate(zip(points, kinds)):
        lo, hi = windows[j] if windows else (0.0, 480.0)
        locs.append(Location(j, kind, float(x), float(y), lo, hi, service[j] if service else 0.0))
    qs = list(qty) if np.ndim(qty) else [qty] * len(requests)
    reqs = [Request(r, p, d, float(q)) for r, ((p, d), q) in enumerate(zip(requests, qs))]
    vehs = [Vehicle(k, o, e, cap) for k, (o, e) in enumerate(vehicles)]
    return Instance("fixture", locs, reqs, vehs, list(transfers), "euclidean", 20.0, 480.0)


def feasible(instance, solution):
    sched = compute_schedule(instance, solution)
    if not sched.feasible:
        return False
    return all(x <= instance.capacity + 1e-9 for route in solution.routes for x in route_loads(instance, route))


def random_solution(instance, rng, tries=3):
    """Insert requests in random order at random feasible places."""
    sol = Solution.empty(instance)
    for r in rng.permutation(len(instance.requests)):
        cands = enumerate_insertions(instance, sol, int(r))
        rng.shuffle(cands)
        for cand in cands:
            new = apply_insertion(instance, sol, cand, check=False)
            if feasible(instance, new):
                sol = new
                break
    return sol


def km_between(a, b):
    """Great-circle distance with the mean earth radius, written out by hand."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * 6371.0088 * math.asin(math.sqrt(min(1.0, h)))


def direct_route_ok(instance, r, vehicles=None):
    """Some vehicle can drive origin, pickup, delivery, destination alone in time."""
    locs = instance.locations
    req = instance.requests[r]
    p, d = locs[req.pickup], locs[req.delivery]

    def minutes(a, b):
        return km_between((a.x, a.y), (b.x, b.y)) * 60.0 / instance.speed

    for veh in vehicles if vehicles is not None else instance.vehicles:
        o, e = locs[veh.origin], locs[veh.destination]
        t = max(p.tw_open, minutes(o, p))
        if t > p.tw_close + 1e-6:
            continue
        t = max(d.tw_open, t + p.service + minutes(p, d))
        if t > d.tw_close + 1e-6:
            continue
        if t + d.service + minutes(d, e) <= instance.horizon + 1e-6:
            return True
    return False


def greedy_serves(instance, n_vehicles):
    """Difficulty-ordered cheapest insertion without transfers, first n vehicles only."""
    sub = Instance(instance.name, instance.locations, instance.requests, instance.vehicles[:n_vehicles],
                   [], instance.metric, instance.speed, instance.horizon)
    order = order_by(insertion_difficulty(sub), range(len(sub.requests)))
    return insert_cheapest(sub, Solution.empty(sub), order, transfers=False) is not None
