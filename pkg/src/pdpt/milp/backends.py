"""MILP backends: a built-in branch-and-bound, HiGHS through scipy, and an
external solver driven through exported model files."""
from __future__ import annotations

import heapq
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import highspy
import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import BINARY, FEAS_TOL, MilpModel, ModelError, export_model, read_assignment

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
LIMIT = "limit"
INT_TOL = 1e-6


class CapabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class BackendCapability:
    supports_callbacks: bool
    supports_warm_start: bool


@dataclass
class SolveResult:
    status: str
    objective: float
    values: np.ndarray | None
    bound: float
    nodes: int = 0
    seconds: float = 0.0
    lazy_added: int = 0

    @property
    def has_solution(self) -> bool:
        return self.values is not None

    def assignment(self, model: MilpModel) -> dict:
        return model.assignment(self.values) if self.values is not None else {}


@dataclass
class Limits:
    time: float | None = None
    gap: float = 0.0
    nodes: int | None = None


@dataclass
class HookResponse:
    """What an integer-solution hook hands back: lazy rows to enforce and,
    optionally, an upper bound on the true optimum that tightens the cutoff."""

    rows: list = field(default_factory=list)
    upper_bound: float = np.inf


def _split_response(resp):
    if isinstance(resp, HookResponse):
        return resp.rows, resp.upper_bound
    return resp, np.inf


def _rows_for_hook(rows):
    for row in rows or ():
        if isinstance(row, dict):
            yield row["coeffs"], row["sense"], row["rhs"], row.get("name", "")
        else:
            coeffs, sense, rhs, *rest = row
            yield coeffs, sense, rhs, rest[0] if rest else ""


class Backend:
    name = "abstract"
    capability = BackendCapability(False, False)

    def solve(self, model: MilpModel, limits: Limits | None = None, hook=None, warm_start=None) -> SolveResult:
        raise NotImplementedError

    def _require(self, hook, warm_start):
        if hook is not None and not self.capability.supports_callbacks:
            raise CapabilityError(f"backend {self.name!r} does not support integer-solution callbacks")
        if warm_start is not None and not self.capability.supports_warm_start:
            raise CapabilityError(f"backend {self.name!r} does not accept warm starts")


# ---------------------------------------------------------------------------
# built-in branch-and-bound


class _Relaxation:
    """LP relaxation kept alive in one HiGHS instance.

    Nodes only change column bounds, so every re-solve starts from the
    previous basis. Lazy rows are appended in place.
    """

    def __init__(self, model: MilpModel):
        self.model = model
        c, A, lo, hi, self.lb, self.ub, integ = model.arrays()
        self.binaries = np.flatnonzero(integ)
        self.priority = np.array([model.priority.get(int(j), 0) for j in self.binaries], dtype=float)
        self.n = model.n_vars
        self.cols = np.arange(self.n, dtype=np.int32)
        self.h = highspy.Highs()
        self.h.setOptionValue("output_flag", False)
        lp = highspy.HighsLp()
        lp.num_col_ = self.n
        lp.num_row_ = model.n_rows
        lp.col_cost_ = c
        lp.col_lower_ = self.lb
        lp.col_upper_ = self.ub
        lp.row_lower_ = lo
        lp.row_upper_ = hi
        csc = sparse.csc_matrix(A)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = csc.indptr.astype(np.int32)
        lp.a_matrix_.index_ = csc.indices.astype(np.int32)
        lp.a_matrix_.value_ = csc.data.astype(np.float64)
        lp.offset_ = model.constant
        if self.n:
            self.h.passModel(lp)
        self.rows_seen = model.n_rows

    def refresh(self):
        for row in self.model.constraints[self.rows_seen :]:
            lo = row.rhs if row.sense in (">=", "==") else -highspy.kHighsInf
            hi = row.rhs if row.sense in ("<=", "==") else highspy.kHighsInf
            idx = np.array([i for i, _ in row.coeffs], dtype=np.int32)
            val = np.array([v for _, v in row.coeffs], dtype=np.float64)
            self.h.addRow(lo, hi, len(idx), idx, val)
        self.rows_seen = self.model.n_rows

    def solve(self, lb, ub):
        if self.n == 0:
            return self.model.constant, np.zeros(0)
        self.h.changeColsBounds(self.n, self.cols, lb, ub)
        self.h.run()
        status = self.h.getModelStatus()
        if status == highspy.HighsModelStatus.kInfeasible:
            return None, None
        if status != highspy.HighsModelStatus.kOptimal:
            # retry from scratch once; stale bases occasionally stall
            self.h.clearSolver()
            self.h.run()
            status = self.h.getModelStatus()
            if status == highspy.HighsModelStatus.kInfeasible:
                return None, None
            if status != highspy.HighsModelStatus.kOptimal:
                raise RuntimeError(f"LP relaxation failed: {self.h.modelStatusToString(status)}")
        x = np.array(self.h.getSolution().col_value)
        return float(self.h.getInfo().objective_function_value), x


class BuiltinBackend(Backend):
    """Best-first branch-and-bound on the binaries with LP bounds.

    After branching the search dives into the up-branch before returning
    to the best open node. Branching picks the most fractional binary,
    earliest declared first on ties, so runs are reproducible. A hook sees
    an integer point only when no open node has a smaller bound; rows it
    returns are added for the rest of the search and the node is re-solved
    if one of them is violated.
    """

    name = "builtin"
    capability = BackendCapability(True, True)

    def __init__(self, abs_tol: float = 1e-7):
        self.abs_tol = abs_tol

    def solve(self, model, limits=None, hook=None, warm_start=None, cutoff=np.inf) -> SolveResult:
        limits = limits or Limits()
        started = time.perf_counter()
        rel = _Relaxation(model)
        n_lazy = 0

        def add_rows(rows, x):
            nonlocal n_lazy
            violated = False
            added = False
            for coeffs, sense, rhs, name in _rows_for_hook(rows):
                k = model.add_constraint(coeffs, sense, rhs, name=name, lazy=True)
                n_lazy += 1
                added = True
                if x is not None and model.constraints[k].violation(x) > FEAS_TOL:
                    violated = True
            if added:
                rel.refresh()
            return violated

        inc_val, inc_x = np.inf, None
        cut_val = float(cutoff)

        def call_hook(x):
            nonlocal cut_val
            rows, ub = _split_response(hook(x))
            cut_val = min(cut_val, ub)
            return add_rows(rows, x)

        if warm_start is not None:
            x0 = model.values_from(warm_start) if isinstance(warm_start, dict) else np.asarray(warm_start, float)
            if model.violations(x0):
                raise ModelError("warm start violates the model: " + ", ".join(model.violations(x0)[:5]))
            if not (hook is not None and call_hook(x0)):
                inc_val, inc_x = model.objective_value(x0), x0

        def prune(bound):
            ref = min(inc_val, cut_val)
            slack = max(self.abs_tol, limits.gap * abs(ref)) if np.isfinite(ref) else 0.0
            return bound >= ref - slack

        heap = [(-np.inf, 0, rel.lb.copy(), rel.ub.copy())]
        counter, nodes, timed_out = 1, 0, False
        while heap:
            if limits.time is not None and time.perf_counter() - started > limits.time:
                timed_out = True
                break
            if limits.nodes is not None and nodes >= limits.nodes:
                timed_out = True
                break
            bound, _, lb, ub = heapq.heappop(heap)
            if prune(bound):
                continue
            # dive from this node
            while True:
                nodes += 1
                val, x = rel.solve(lb, ub)
                if val is None or prune(val):
                    break
                xb = x[rel.binaries]
                frac = np.abs(xb - np.round(xb))
                if frac.max(initial=0.0) <= INT_TOL:
                    x = x.copy()
                    x[rel.binaries] = np.round(xb)
                    if hook is not None and heap and val > heap[0][0] + self.abs_tol:
                        # check it only once no open node can undercut it
                        heapq.heappush(heap, (val, counter, lb, ub))
                        counter += 1
                        break
                    if hook is not None and call_hook(x):
                        continue
                    val = model.objective_value(x)
                    if val < inc_val:
                        inc_val, inc_x = val, x
                    break
                score = np.where(frac > INT_TOL, rel.priority - np.abs(frac - 0.5), -np.inf)
                j = int(rel.binaries[int(np.argmax(score))])
                lb0, ub0 = lb.copy(), ub.copy()
                ub0[j] = 0.0
                heapq.heappush(heap, (val, counter, lb0, ub0))
                counter += 1
                lb = lb.copy()
                lb[j] = 1.0
                if limits.time is not None and time.perf_counter() - started > limits.time:
                    heapq.heappush(heap, (val, counter, lb, ub))
                    counter += 1
                    break

        # the bound covers pruned nodes too: nothing below min(incumbent, cutoff) was left unexplored
        open_bound = min((b for b, *_ in heap), default=np.inf) if timed_out else np.inf
        bound = min(open_bound, inc_val, cut_val)
        seconds = time.perf_counter() - started
        if inc_x is None:
            status = LIMIT if timed_out else INFEASIBLE
            return SolveResult(status, np.inf, None, bound, nodes, seconds, n_lazy)
        status = FEASIBLE if timed_out else OPTIMAL
        return SolveResult(status, inc_val, inc_x, bound, nodes, seconds, n_lazy)


# ---------------------------------------------------------------------------
# HiGHS via scipy


class HighsBackend(Backend):
    """Whole-model solves with HiGHS; no callbacks, so Benders runs iterate."""

    name = "highs"
    capability = BackendCapability(False, False)

    def solve(self, model, limits=None, hook=None, warm_start=None) -> SolveResult:
        self._require(hook, warm_start)
        limits = limits or Limits()
        started = time.perf_counter()
        if model.n_vars == 0:
            return SolveResult(OPTIMAL, model.constant, np.zeros(0), model.constant)
        c, A, lo, hi, lb, ub, integ = model.arrays()
        options = {"mip_rel_gap": limits.gap}
        if limits.time is not None:
            options["time_limit"] = float(limits.time)
        cons = [LinearConstraint(A, lo, hi)] if model.n_rows else []
        res = milp(c, constraints=cons, integrality=integ, bounds=Bounds(lb, ub), options=options)
        seconds = time.perf_counter() - started
        dual = getattr(res, "mip_dual_bound", None)
        bound = -np.inf if dual is None or not np.isfinite(dual) else float(dual) + model.constant
        if res.x is None:
            status = INFEASIBLE if res.status == 2 else LIMIT
            return SolveResult(status, np.inf, None, bound if status == LIMIT else np.inf, 0, seconds)
        x = np.asarray(res.x, dtype=float)
        x[integ == 1] = np.round(x[integ == 1])
        val = model.objective_value(x)
        if res.status == 0:
            return SolveResult(OPTIMAL, val, x, val, 0, seconds)
        return SolveResult(FEASIBLE, val, x, min(bound, val), 0, seconds)


# ---------------------------------------------------------------------------
# external solver through files


@dataclass
class ExternalFileBackend(Backend):
    """Run ``command`` on an exported model and import its assignment file.

    ``command`` is a template with ``{model}`` and ``{solution}`` fields.
    The solution file holds ``name value`` lines; a ``# status: <status>``
    comment sets the reported status, which otherwise is ``feasible``. An
    empty or missing file means the solver found nothing.
    """

    command: str = ""
    fmt: str = "lp"
    workdir: str | None = None
    name: str = field(default="external-file", init=False)
    capability: BackendCapability = field(default=BackendCapability(False, False), init=False)

    def solve(self, model, limits=None, hook=None, warm_start=None) -> SolveResult:
        self._require(hook, warm_start)
        if not self.command:
            raise CapabilityError("external-file backend needs a command template")
        started = time.perf_counter()
        with tempfile.TemporaryDirectory(dir=self.workdir) as tmp:
            mpath = Path(tmp) / f"model.{self.fmt}"
            spath = Path(tmp) / "solution.txt"
            export_model(model, self.fmt, mpath)
            args = [a.format(model=str(mpath), solution=str(spath)) for a in shlex.split(self.command)]
            timeout = (limits.time + 30.0) if limits and limits.time else None
            proc = subprocess.run(args, capture_output=True, text=True, timeout=timeout, check=False)
            if proc.returncode != 0:
                raise RuntimeError(f"external solver failed ({proc.returncode}): {proc.stderr.strip()[:500]}")
            text = spath.read_text(encoding="utf-8") if spath.exists() else ""
            status = FEASIBLE
            for line in text.splitlines():
                if line.startswith("# status:"):
                    status = line.split(":", 1)[1].strip()
            assignment = read_assignment(spath) if text.strip() else {}
        seconds = time.perf_counter() - started
        if not assignment:
            return SolveResult(INFEASIBLE if status in (FEASIBLE, INFEASIBLE) else status, np.inf, None, np.inf, 0, seconds)
        x = model.values_from(assignment, default=0.0)
        bad = model.violations(x)
        if bad:
            raise ModelError("external assignment violates the model: " + ", ".join(bad[:5]))
        val = model.objective_value(x)
        return SolveResult(status, val, x, val if status == OPTIMAL else -np.inf, 0, seconds)


def get_backend(name: str, **options) -> Backend:
    if name == "builtin":
        return BuiltinBackend(**options)
    if name == "highs":
        return HighsBackend()
    if name == "external-file":
        return ExternalFileBackend(**options)
    raise ValueError(f"unknown backend {name!r}; choose builtin, highs or external-file")


def solve(model: MilpModel, backend: Backend | str = "builtin", limits: Limits | None = None, hook=None, warm_start=None):
    be = get_backend(backend) if isinstance(backend, str) else backend
    return be.solve(model, limits, hook=hook, warm_start=warm_start)
