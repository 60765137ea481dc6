"""Master problem: one pickup-to-delivery path per request, no vehicles.

Variables are ``z`` (objective), ``x_i_j`` (edge selected), ``y_r_i_j``
(request ``r`` on board along edge ``(i, j)``), ``a_j`` (visit time at
non-transfer locations) and ``b_r_t`` (time of request ``r`` at transfer
``t``). Edge and load variables that the valid inequalities fix to zero
are left out by default; ``fix="bound"`` keeps them with an upper bound of
zero instead, which gives the full variable set.

With ``time_fixing`` (the default) edges and loads that no schedule can
use are fixed as well: an edge whose head window closes before the tail
can be left, and a load ``(r, i, j)`` that cannot sit between the earliest
time ``r`` reaches ``i`` and the latest time it can leave ``j`` and still
be delivered. Both follow from the time constraints for any integer point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..milp.model import BINARY, CONTINUOUS, MilpModel
from ..model import Instance

INT_TOL = 1e-6
TIME_TOL = 1e-6


class ModelInconsistency(RuntimeError):
    pass


@dataclass
class MasterModel:
    instance: Instance
    model: MilpModel
    z: int
    x: dict = field(default_factory=dict)  # (i, j) -> var
    y: dict = field(default_factory=dict)  # (r, i, j) -> var
    a: dict = field(default_factory=dict)  # j -> var
    b: dict = field(default_factory=dict)  # (r, t) -> var

    def edge_var(self, i: int, j: int) -> int:
        return self.x[(i, j)]


def _structure(instance: Instance):
    origins = [v.origin for v in instance.vehicles]
    dests = [v.destination for v in instance.vehicles]
    depots = set(origins) | set(dests)
    customers = [j for r in instance.requests for j in (r.pickup, r.delivery)]
    return origins, dests, depots, customers


def fixed_edges(instance: Instance) -> set:
    """Edges forced to zero: loops, delivery back to its pickup, first stop a
    delivery, last stop a pickup, a depot pair of two vehicles, entering an
    origin and leaving a destination."""
    origins, dests, _, _ = _structure(instance)
    n = len(instance.locations)
    out = {(j, j) for j in range(n)}
    for r in instance.requests:
        out.add((r.delivery, r.pickup))
        for k, v in enumerate(instance.vehicles):
            out.add((v.origin, r.delivery))
            out.add((r.pickup, v.destination))
    for k, o in enumerate(origins):
        for k2, e in enumerate(dests):
            if k != k2:
                out.add((o, e))
    for o in origins:
        out.update((j, o) for j in range(n))
    for e in dests:
        out.update((e, j) for j in range(n))
    return out


def fixed_loads(instance: Instance, fixed: set) -> set:
    """``(r, i, j)`` forced to zero: edges into depots, out of ``d_r`` or into
    ``p_r``, and loads on fixed edges."""
    _, _, depots, _ = _structure(instance)
    n = len(instance.locations)
    out = set()
    for r in instance.requests:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if j in depots or i == r.delivery or j == r.pickup or (i, j) in fixed:
                    out.add((r.id, i, j))
    return out


def _earliest(tt, lo, hi, src):
    """Earliest service start at every location on a walk from ``src``."""
    n = len(lo)
    best = np.full(n, np.inf)
    best[src] = lo[src]
    todo = [src]
    while todo:
        u = todo.pop()
        cand = np.maximum(lo, best[u] + tt[u])
        better = (cand < best - TIME_TOL) & (cand <= hi + TIME_TOL)
        better[src] = False
        best[better] = cand[better]
        todo.extend(np.flatnonzero(better).tolist())
    return best


def _latest(tt, lo, hi, dst):
    """Latest service start at every location on a walk that can still reach ``dst``."""
    n = len(lo)
    best = np.full(n, -np.inf)
    best[dst] = hi[dst]
    todo = [dst]
    while todo:
        v = todo.pop()
        cand = np.minimum(hi, best[v] - tt[:, v])
        better = (cand > best + TIME_TOL) & (cand >= lo - TIME_TOL)
        better[dst] = False
        best[better] = cand[better]
        todo.extend(np.flatnonzero(better).tolist())
    return best


def time_infeasible(instance: Instance) -> tuple[set, set]:
    """Edges and loads that no time-feasible integer point can select."""
    T = instance.transfer_set
    tt = instance.tt
    lo, hi = instance.tw_open, instance.tw_close
    n = len(instance.locations)
    edges = {
        (i, j) for i in range(n) for j in range(n)
        if i != j and i not in T and j not in T and lo[i] + tt[i, j] > hi[j] + TIME_TOL
    }
    loads = set()
    for r in instance.requests:
        if r.qty <= 0:
            # an empty request does not force its edges on, so its loads carry no time
            continue
        first = _earliest(tt, lo, hi, r.pickup)
        last = _latest(tt, lo, hi, r.delivery)
        reach = first[:, None] + tt > last[None, :] + TIME_TOL
        for i, j in zip(*np.nonzero(reach)):
            if i != j:
                loads.add((r.id, int(i), int(j)))
    return edges, loads


def build_master(instance: Instance, fix: str = "omit", time_fixing: bool = True) -> MasterModel:
    if fix not in ("omit", "bound"):
        raise ValueError("fix must be 'omit' or 'bound'")
    keep_all = fix == "bound"
    n = len(instance.locations)
    T = instance.transfer_set
    origins, dests, depots, customers = _structure(instance)
    tt, c = instance.tt, instance.distance
    lo, hi = instance.tw_open, instance.tw_close
    Q = instance.capacity
    fx = fixed_edges(instance)
    if time_fixing:
        tx, ty = time_infeasible(instance)
        fx = fx | tx
    fy = fixed_loads(instance, fx)
    if time_fixing:
        fy = fy | ty
    # loads out of a depot are zero through flow conservation
    fy_out = {(r.id, i, j) for r in instance.requests for i in depots for j in range(n) if i != j}

    m = MilpModel(name=f"master_{instance.name}")
    z = m.add_var("z", 0.0, np.inf, CONTINUOUS, obj=1.0)
    mm = MasterModel(instance, m, z)

    for i in range(n):
        for j in range(n):
            if (i, j) in fx and not keep_all:
                continue
            ub = 0.0 if (i, j) in fx else 1.0
            mm.x[(i, j)] = m.add_var(f"x_{i}_{j}", 0.0, ub, BINARY)
            m.priority[mm.x[(i, j)]] = 1
    for r in instance.requests:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                key = (r.id, i, j)
                if (key in fy or key in fy_out) and not keep_all:
                    continue
                ub = 0.0 if key in fy else 1.0
                mm.y[key] = m.add_var(f"y_{r.id}_{i}_{j}", 0.0, ub, BINARY)
    for j in range(n):
        if j not in T:
            mm.a[j] = m.add_var(f"a_{j}", float(lo[j]), float(hi[j]), CONTINUOUS)
    for r in instance.requests:
        for t in instance.transfer_ids:
            mm.b[(r.id, t)] = m.add_var(f"b_{r.id}_{t}", float(lo[t]), float(hi[t]), CONTINUOUS)

    X, Y = mm.x, mm.y
    y_out = {(r.id, i): [] for r in instance.requests for i in range(n)}
    y_in = {(r.id, j): [] for r in instance.requests for j in range(n)}
    for (r, i, j), v in Y.items():
        y_out[(r, i)].append(v)
        y_in[(r, j)].append(v)
    x_out = {i: [] for i in range(n)}
    x_in = {j: [] for j in range(n)}
    for (i, j), v in X.items():
        x_out[i].append(v)
        x_in[j].append(v)

    m.add_constraint([(z, 1.0)] + [(v, -float(c[i, j])) for (i, j), v in X.items()], ">=", 0.0, "objective_link")
    for r in instance.requests:
        m.add_constraint([(v, 1.0) for v in y_out[(r.id, r.pickup)]], "==", 1.0, f"leave_pickup_{r.id}")
        m.add_constraint([(v, 1.0) for v in y_in[(r.id, r.delivery)]], "==", 1.0, f"reach_delivery_{r.id}")
        for j in range(n):
            if j in (r.pickup, r.delivery):
                continue
            if y_in[(r.id, j)]:
                m.add_constraint([(v, 1.0) for v in y_in[(r.id, j)]], "<=", 1.0, f"visit_once_{r.id}_{j}")
            if y_in[(r.id, j)] or y_out[(r.id, j)]:
                m.add_constraint(
                    [(v, 1.0) for v in y_in[(r.id, j)]] + [(v, -1.0) for v in y_out[(r.id, j)]],
                    "==", 0.0, f"load_flow_{r.id}_{j}",
                )
    for j in customers:
        m.add_constraint([(v, 1.0) for v in x_in[j]], "==", 1.0, f"enter_{j}")
    for j in range(n):
        if j in depots:
            continue
        m.add_constraint([(v, 1.0) for v in x_in[j]] + [(v, -1.0) for v in x_out[j]], "==", 0.0, f"edge_flow_{j}")
    loads_on = {}
    for (r, i, j), v in Y.items():
        loads_on.setdefault((i, j), []).append((v, instance.requests[r].qty))
    for (i, j), xv in X.items():
        terms = loads_on.get((i, j))
        if terms:
            m.add_constraint([(v, float(q)) for v, q in terms] + [(xv, -Q)], "<=", 0.0, f"capacity_{i}_{j}")

    # valid inequalities beyond the variable fixings
    if keep_all:
        for r in instance.requests:
            for j in depots:
                if y_in[(r.id, j)]:
                    m.add_constraint([(v, 1.0) for v in y_in[(r.id, j)]], "==", 0.0, f"no_depot_load_{r.id}_{j}")
            if y_out[(r.id, r.delivery)]:
                m.add_constraint([(v, 1.0) for v in y_out[(r.id, r.delivery)]], "==", 0.0, f"unload_at_delivery_{r.id}")
            if y_in[(r.id, r.pickup)]:
                m.add_constraint([(v, 1.0) for v in y_in[(r.id, r.pickup)]], "==", 0.0, f"load_at_pickup_{r.id}")
    for k, (o, e) in enumerate(zip(origins, dests)):
        m.add_constraint([(v, 1.0) for v in x_out[o]], "==", 1.0, f"leave_origin_{k}")
        m.add_constraint([(v, 1.0) for v in x_in[e]], "==", 1.0, f"reach_destination_{k}")
    for t in instance.transfer_ids:
        m.add_constraint([(v, 1.0) for v in x_in[t]], "<=", float(len(instance.vehicles)), f"transfer_visits_{t}")

    # time windows, big-M = travel + latest start at the tail
    for (i, j), xv in X.items():
        if i == j or i in T or j in T:
            continue
        M = float(tt[i, j] + hi[i])
        m.add_constraint([(mm.a[i], 1.0), (mm.a[j], -1.0), (xv, M)], "<=", M - float(tt[i, j]), f"time_{i}_{j}")
    for (r, i, j), yv in Y.items():
        if i not in T and j not in T:
            continue
        M = float(tt[i, j] + hi[i])
        left = mm.b[(r, i)] if i in T else mm.a[i]
        right = mm.b[(r, j)] if j in T else mm.a[j]
        m.add_constraint([(left, 1.0), (right, -1.0), (yv, M)], "<=", M - float(tt[i, j]), f"time_{r}_{i}_{j}")
    return mm


# ---------------------------------------------------------------------------
# reading master solutions


@dataclass(frozen=True)
class MasterAssignment:
    z: float
    x: frozenset  # selected edges
    y: dict  # request -> frozenset of loaded edges
    paths: dict  # request -> tuple of locations
    tau: dict  # request -> tuple of (i, t, j)
    edges: tuple  # sorted E

    @property
    def key(self):
        return self.edges, tuple(sorted(self.tau.items()))


def build_path(instance: Instance, r: int, loaded) -> list:
    """Walk from ``p_r`` along loaded edges, scanning successors by id."""
    req = instance.requests[r]
    n = len(instance.locations)
    path, last = [req.pickup], req.pickup
    while last != req.delivery:
        for j in range(n):
            if (last, j) in loaded:
                path.append(j)
                last = j
                break
        else:
            raise ModelInconsistency(f"request {r}: no loaded edge leaves location {last}")
        if len(path) > n:
            raise ModelInconsistency(f"request {r}: loaded edges contain a cycle")
    return path


def extract_paths(instance: Instance, ybar: dict, z: float = float("nan"), xbar=None) -> MasterAssignment:
    """Paths, transfer triples and the edge set ``E`` from integral loads.

    ``ybar`` maps ``(r, i, j)`` to a value; entries above one half count as
    selected.
    """
    T = instance.transfer_set
    loaded = {r.id: set() for r in instance.requests}
    for (r, i, j), v in ybar.items():
        if v > 0.5:
            loaded[r].add((i, j))
    paths, tau, edges = {}, {}, set()
    for req in instance.requests:
        path = build_path(instance, req.id, loaded[req.id])
        paths[req.id] = tuple(path)
        tau[req.id] = tuple((path[k - 1], path[k], path[k + 1]) for k in range(1, len(path) - 1) if path[k] in T)
        edges.update(zip(path[:-1], path[1:]))
    xs = frozenset(xbar) if xbar is not None else frozenset(edges)
    return MasterAssignment(z, xs, {r: frozenset(e) for r, e in loaded.items()}, paths, tau, tuple(sorted(edges)))


def read_master(mm: MasterModel, values) -> MasterAssignment:
    values = np.asarray(values, dtype=float)
    xbar = {e for e, v in mm.x.items() if values[v] > 1.0 - INT_TOL}
    ybar = {key: float(values[v]) for key, v in mm.y.items()}
    return extract_paths(mm.instance, ybar, float(values[mm.z]), xbar)
