"""Branch-and-Check: the master is searched once and every integer master
solution is checked by the subproblem, which answers with a cut."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from ..milp.backends import Backend, CapabilityError, HookResponse, Limits, OPTIMAL, INFEASIBLE, get_backend
from ..model import Instance
from ..routing import Solution, compute_schedule, trace_journeys, validate_solution
from .cuts import BendersCut, make_feasibility_cut, make_optimality_cut
from .master import MasterAssignment, MasterModel, build_master, read_master
from .subproblem import solve_subproblem

TOL = 1e-6


class NoFeasibleSolution(RuntimeError):
    pass


@dataclass
class CutLogEntry:
    iteration: int
    kind: str
    edges: tuple
    tau: tuple
    master_z: float
    bound: float
    values: np.ndarray = field(repr=False, default=None)


@dataclass
class BnCResult:
    lb: float
    ub: float
    time_s: float
    iterations: int
    cuts: dict
    solution: Solution | None
    status: str
    log: list = field(default_factory=list)
    subproblem_values: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        if not np.isfinite(self.ub):
            return float("inf")
        return optimality_gap(self.lb, self.ub)

    def to_dict(self) -> dict:
        return {
            "lb": self.lb,
            "ub": self.ub if np.isfinite(self.ub) else None,
            "gap": self.gap if np.isfinite(self.gap) else None,
            "time_s": self.time_s,
            "iters": self.iterations,
            "cuts": {"opt": self.cuts.get("optimality", 0), "feas": self.cuts.get("feasibility", 0)},
            "status": self.status,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def write_cut_log(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "kind", "edges", "master_z", "bound"])
            for e in self.log:
                w.writerow([e.iteration, e.kind, " ".join(f"{i}-{j}" for i, j in e.edges), repr(e.master_z), repr(e.bound)])


# ---------------------------------------------------------------------------
# metrics


def optimality_gap(lb: float, ub: float) -> float:
    """``(UB - LB) / UB`` in percent."""
    if ub == 0:
        raise ValueError("gap is undefined for a zero upper bound")
    return (ub - lb) / ub * 100.0


def gap_metrics(lb, ub_lns, ub_lbbd, gap_lbbd=None, gap_lbbd_ws=None, time_lbbd=None, time_lbbd_ws=None) -> dict:
    """Gap of the exact run, deviation of the heuristic, and warm-start gains.

    ``Gap`` uses the exact method's upper bound and ``Gap_lns`` the
    heuristic's. ``Imp`` is the drop in gap from warm starting and ``Acc``
    the time saved; both need the matching inputs.
    """
    if not ub_lns or not ub_lbbd:
        raise ValueError("upper bounds must be positive")
    out = {
        "Gap": optimality_gap(lb, ub_lbbd),
        "Gap_lns": optimality_gap(lb, ub_lns),
        "Err": (ub_lns - ub_lbbd) / ub_lns * 100.0,
    }
    if gap_lbbd is not None and gap_lbbd_ws is not None:
        out["Imp"] = gap_lbbd - gap_lbbd_ws
    if time_lbbd is not None and time_lbbd_ws is not None:
        out["Acc"] = time_lbbd - time_lbbd_ws
    return out


# ---------------------------------------------------------------------------
# warm start


def warm_start_from(mm: MasterModel, solution: Solution, check: bool = True) -> dict:
    """Master assignment that reproduces a feasible routing plan."""
    inst = mm.instance
    if check:
        report = validate_solution(inst, solution)
        if report:
            raise ValueError("warm start solution is infeasible: " + "; ".join(map(str, report[:3])))
    T = inst.transfer_set
    values = np.zeros(mm.model.n_vars)
    for route in solution.routes:
        for s1, s2 in zip(route[:-1], route[1:]):
            if (s1.loc, s2.loc) not in mm.x:
                raise ValueError(f"edge {s1.loc}->{s2.loc} is not a master variable")
            values[mm.x[(s1.loc, s2.loc)]] = 1.0
    journeys, _ = trace_journeys(inst, solution)
    sched = compute_schedule(inst, solution)
    depart = {}  # (r, t) -> time request r leaves transfer t
    for r, legs in journeys.items():
        for leg in legs:
            route = solution.routes[leg.vehicle]
            locs = [s.loc for s in route]
            i0, i1 = locs.index(leg.src), locs.index(leg.dst)
            for h in range(i0, i1):
                key = (r, locs[h], locs[h + 1])
                if key not in mm.y:
                    raise ValueError(f"load {key} is not a master variable")
                if values[mm.y[key]] > 0.5:
                    raise ValueError(f"request {r} would use edge {key[1:]} twice")
                values[mm.y[key]] = 1.0
                if locs[h] in T:
                    depart[(r, locs[h])] = sched.times[leg.vehicle][h]
    for k, route in enumerate(solution.routes):
        for h, s in enumerate(route):
            if s.loc not in T:
                values[mm.a[s.loc]] = sched.times[k][h]
    for (r, t), v in mm.b.items():
        values[v] = depart.get((r, t), float(inst.tw_open[t]))
    values[mm.z] = sum(float(inst.distance[i, j]) * values[v] for (i, j), v in mm.x.items())
    bad = mm.model.violations(values)
    if bad:
        raise ValueError("warm start violates master constraints: " + ", ".join(bad[:5]))
    return mm.model.assignment(values)


# ---------------------------------------------------------------------------
# orchestration


class _Checker:
    """Turns integer master solutions into subproblem calls and cuts."""

    def __init__(self, mm: MasterModel, log_values: bool):
        self.mm = mm
        self.inst = mm.instance
        self.ub = np.inf
        self.best: Solution | None = None
        self.cut_edges = {}  # edges -> cut
        self.evaluated = {}  # (edges, tau) -> (feasible, cost)
        self.log: list = []
        self.subvalues: list = []
        self.iterations = 0
        self.log_values = log_values

    def offer(self, solution: Solution, cost: float):
        if cost < self.ub - 1e-12:
            self.ub, self.best = cost, solution

    def __call__(self, values) -> HookResponse:
        self.iterations += 1
        ma: MasterAssignment = read_master(self.mm, values)
        key = ma.key
        if key not in self.evaluated:
            res = solve_subproblem(self.inst, ma.paths, ma.edges)
            self.evaluated[key] = (res.feasible, res.cost)
            if res.feasible:
                self.subvalues.append((ma.z, res.cost))
                self.offer(res.solution, res.cost)
        feasible, cost = self.evaluated[key]
        rows = []
        if ma.edges not in self.cut_edges:
            cut = make_optimality_cut(ma.edges, cost) if feasible else make_feasibility_cut(ma.edges)
            self.cut_edges[ma.edges] = cut
            n = len(self.log)
            rows.append(cut.row(self.mm, f"{'opt' if feasible else 'feas'}_cut_{n}"))
            self.log.append(
                CutLogEntry(self.iterations, cut.kind, ma.edges, tuple(sorted(ma.tau.items())), ma.z, cut.bound,
                            np.asarray(values, float).copy() if self.log_values else None)
            )
        return HookResponse(rows, self.ub)

    def counts(self) -> dict:
        out = {"optimality": 0, "feasibility": 0}
        for cut in self.cut_edges.values():
            out[cut.kind] += 1
        return out


def branch_and_check(
    instance: Instance,
    backend: Backend | str = "builtin",
    warm_start: Solution | None = None,
    time_limit: float | None = None,
    log_values: bool = False,
    max_iterations: int = 100_000,
) -> BnCResult:
    """Solve to optimality (or until the time limit) by Branch-and-Check.

    Backends without integer-solution callbacks run the equivalent
    iterative loop: solve the master to optimality, add the cut, repeat.
    """
    started = time.perf_counter()
    be = get_backend(backend) if isinstance(backend, str) else backend
    mm = build_master(instance)
    chk = _Checker(mm, log_values)
    ws = None
    if warm_start is not None:
        ws = warm_start_from(mm, warm_start)
        chk.offer(warm_start, warm_start.objective(instance))

    if be.capability.supports_callbacks:
        if ws is not None and not be.capability.supports_warm_start:
            raise CapabilityError(f"backend {be.name!r} cannot take a warm start")
        res = be.solve(mm.model, Limits(time=time_limit), hook=chk, warm_start=ws)
        lb = res.bound
        exhausted = res.status in (OPTIMAL, INFEASIBLE)
    else:
        lb, exhausted = -np.inf, False
        if ws is not None:
            resp = chk(mm.model.values_from(ws))
            for coeffs, sense, rhs, name in resp.rows:
                mm.model.add_constraint(coeffs, sense, rhs, name=name, lazy=True)
        while chk.iterations < max_iterations:
            left = None if time_limit is None else time_limit - (time.perf_counter() - started)
            if left is not None and left <= 0:
                break
            res = be.solve(mm.model, Limits(time=left))
            if res.status == INFEASIBLE:
                exhausted = True
                lb = max(lb, chk.ub)
                break
            if res.status != OPTIMAL:
                lb = max(lb, res.bound)
                break
            lb = max(lb, res.objective)
            if lb >= chk.ub - TOL:
                exhausted = True
                break
            resp = chk(res.values)
            if not resp.rows:
                # repeated edge set whose cut already holds: z is exact here
                exhausted = True
                lb = max(lb, min(res.objective, chk.ub))
                break
            for coeffs, sense, rhs, name in resp.rows:
                mm.model.add_constraint(coeffs, sense, rhs, name=name, lazy=True)

    if exhausted:
        if not np.isfinite(chk.ub):
            raise NoFeasibleSolution("no feasible PDPT solution")
        lb = chk.ub
    lb = min(lb, chk.ub)
    status = "optimal" if exhausted else "limit"
    return BnCResult(
        lb, chk.ub, time.perf_counter() - started, chk.iterations, chk.counts(), chk.best, status,
        chk.log, chk.subvalues,
    )
