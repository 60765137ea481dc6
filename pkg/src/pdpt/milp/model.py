"""Solver-agnostic MILP models with LP and MPS export."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

BINARY = "binary"
CONTINUOUS = "continuous"
SENSES = ("<=", ">=", "==")
FEAS_TOL = 1e-6
_NAME_OK = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\[\]]*$")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float
    upper: float
    kind: str


@dataclass(frozen=True)
class Constraint:
    coeffs: tuple  # ((var index, coefficient), ...)
    sense: str
    rhs: float
    name: str = ""
    lazy: bool = False

    def activity(self, values) -> float:
        return float(sum(c * values[i] for i, c in self.coeffs))

    def violation(self, values) -> float:
        lhs = self.activity(values)
        if self.sense == "<=":
            return max(lhs - self.rhs, 0.0)
        if self.sense == ">=":
            return max(self.rhs - lhs, 0.0)
        return abs(lhs - self.rhs)


@dataclass
class MilpModel:
    """Minimization model ``min c.x + const`` over linear rows."""

    name: str = "model"
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    constant: float = 0.0
    priority: dict = field(default_factory=dict)  # var -> branching priority, higher first
    _index: dict = field(default_factory=dict, repr=False)

    # -- building ---------------------------------------------------------

    def add_var(self, name: str, lower: float = 0.0, upper: float = 1.0, kind: str = BINARY, obj: float = 0.0) -> int:
        if kind not in (BINARY, CONTINUOUS):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lower, upper = max(0.0, float(lower)), min(1.0, float(upper))
        if lower > upper:
            raise ModelError(f"variable {name} has lower bound above upper bound")
        idx = len(self.variables)
        self.variables.append(Variable(name, float(lower), float(upper), kind))
        self._index.setdefault(name, idx)
        if obj:
            self.objective[idx] = self.objective.get(idx, 0.0) + float(obj)
        return idx

    def add_constraint(self, coeffs, sense: str, rhs: float, name: str = "", lazy: bool = False) -> int:
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        merged: dict = {}
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for i, c in items:
            if not 0 <= i < len(self.variables):
                raise ModelError(f"constraint {name or len(self.constraints)} references undeclared variable {i}")
            merged[i] = merged.get(i, 0.0) + float(c)
        row = Constraint(tuple(sorted((i, c) for i, c in merged.items() if c != 0.0)), sense, float(rhs), name, lazy)
        self.constraints.append(row)
        return len(self.constraints) - 1

    def set_objective(self, coeffs, constant: float = 0.0) -> None:
        self.objective = {}
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for i, c in items:
            self.objective[i] = self.objective.get(i, 0.0) + float(c)
        self.constant = float(constant)

    def var(self, name: str) -> int:
        return self._index[name]

    def has_var(self, name: str) -> bool:
        return name in self._index

    @property
    def lazy_rows(self) -> list:
        return [c for c in self.constraints if c.lazy]

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_rows(self) -> int:
        return len(self.constraints)

    # -- evaluation -------------------------------------------------------

    def objective_value(self, values) -> float:
        return self.constant + float(sum(c * values[i] for i, c in self.objective.items()))

    def violations(self, values, tol: float = FEAS_TOL) -> list:
        """Names (or indices) of rows and bounds violated by ``values``."""
        out = []
        for k, v in enumerate(self.variables):
            x = values[k]
            if x < v.lower - tol or x > v.upper + tol:
                out.append(f"bound:{v.name}")
            elif v.kind == BINARY and abs(x - round(x)) > tol:
                out.append(f"integrality:{v.name}")
        for k, row in enumerate(self.constraints):
            if row.violation(values) > tol:
                out.append(row.name or f"row{k}")
        return out

    def assignment(self, values) -> dict:
        return {v.name: float(values[k]) for k, v in enumerate(self.variables)}

    def values_from(self, assignment: dict, default: float | None = None) -> np.ndarray:
        out = np.empty(self.n_vars)
        for k, v in enumerate(self.variables):
            if v.name in assignment:
                out[k] = assignment[v.name]
            elif default is not None:
                out[k] = default
            else:
                raise ModelError(f"assignment misses variable {v.name}")
        return out

    # -- matrix form ------------------------------------------------------

    def arrays(self):
        """``(c, A, row_lo, row_hi, lb, ub, integrality)`` with ``A`` in CSR form."""
        n = self.n_vars
        c = np.zeros(n)
        for i, v in self.objective.items():
            c[i] = v
        rows, cols, vals = [], [], []
        lo = np.empty(self.n_rows)
        hi = np.empty(self.n_rows)
        for k, row in enumerate(self.constraints):
            for i, a in row.coeffs:
                rows.append(k)
                cols.append(i)
                vals.append(a)
            lo[k] = row.rhs if row.sense in (">=", "==") else -np.inf
            hi[k] = row.rhs if row.sense in ("<=", "==") else np.inf
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(self.n_rows, n))
        lb = np.array([v.lower for v in self.variables])
        ub = np.array([v.upper for v in self.variables])
        integrality = np.array([1 if v.kind == BINARY else 0 for v in self.variables], dtype=np.int64)
        return c, A, lo, hi, lb, ub, integrality

    # -- export -----------------------------------------------------------

    def check_names(self) -> None:
        seen = {}
        for v in self.variables:
            if not _NAME_OK.match(v.name):
                raise ModelError(f"variable name {v.name!r} is not exportable")
            if v.name in seen:
                raise ModelError(f"duplicate variable name {v.name!r}")
            seen[v.name] = True
        names = [c.name for c in self.constraints if c.name]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ModelError(f"duplicate constraint names {sorted(dup)[:5]}")
        for n in names:
            if not _NAME_OK.match(n):
                raise ModelError(f"constraint name {n!r} is not exportable")

    def to_lp(self) -> str:
        self.check_names()
        out = [f"\\ {self.name}", "Minimize"]
        terms = _terms(self, sorted(self.objective.items()))
        if self.constant:
            terms += f" {_signed(self.constant)}"
        out.append(f" obj: {terms.strip() or '0'}")
        out.append("Subject To")
        for k, row in enumerate(self.constraints):
            label = row.name or f"r{k}"
            sense = "=" if row.sense == "==" else row.sense
            body = _terms(self, row.coeffs).strip()
            if not body:
                body = f"0 {self.variables[0].name}" if self.variables else "0"
            out.append(f" {label}: {body} {sense} {_num(row.rhs)}")
        out.append("Bounds")
        for v in self.variables:
            if v.kind == BINARY:
                continue
            if v.lower == -math.inf and v.upper == math.inf:
                out.append(f" {v.name} free")
            elif v.upper == math.inf:
                out.append(f" {v.name} >= {_num(v.lower)}")
            else:
                lo = "-inf" if v.lower == -math.inf else _num(v.lower)
                out.append(f" {lo} <= {v.name} <= {_num(v.upper)}")
        binaries = [v for v in self.variables if v.kind == BINARY]
        fixed = [v for v in binaries if v.lower > 0 or v.upper < 1]
        for v in fixed:
            out.append(f" {_num(v.lower)} <= {v.name} <= {_num(v.upper)}")
        if binaries:
            out.append("Binaries")
            for k in range(0, len(binaries), 8):
                out.append(" " + " ".join(v.name for v in binaries[k : k + 8]))
        out.append("End")
        return "\n".join(out) + "\n"

    def to_mps(self) -> str:
        """Fixed-form MPS. Names longer than eight characters are replaced
        by positional ones (``C0000001``, ``R0000001``)."""
        self.check_names()
        long_names = any(len(v.name) > 8 for v in self.variables) or any(
            len(c.name or f"R{k}") > 8 for k, c in enumerate(self.constraints)
        )
        cname = [f"C{k:07d}" if long_names else v.name for k, v in enumerate(self.variables)]
        rname = [f"R{k:07d}" if long_names else (c.name or f"R{k}") for k, c in enumerate(self.constraints)]

        def line(f1="", f2="", f3="", f4="", f5="", f6=""):
            s = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}"
            if f5:
                s += f"   {f5:<8}  {f6:>12}"
            return s.rstrip()

        out = [f"NAME          {self.name[:8] if long_names else self.name}", "ROWS", " N  OBJ"]
        sense = {"<=": "L", ">=": "G", "==": "E"}
        for k, row in enumerate(self.constraints):
            out.append(f" {sense[row.sense]}  {rname[k]}")
        out.append("COLUMNS")
        by_col: dict = {i: [] for i in range(self.n_vars)}
        for i, c in sorted(self.objective.items()):
            if c:
                by_col[i].append(("OBJ", c))
        for k, row in enumerate(self.constraints):
            for i, c in row.coeffs:
                by_col[i].append((rname[k], c))
        in_int = False
        marker = 0
        for i, v in enumerate(self.variables):
            is_int = v.kind == BINARY
            if is_int != in_int:
                tag = "'INTORG'" if is_int else "'INTEND'"
                out.append(f"    M{marker:07d}  'MARKER'                 {tag}")
                marker += 1
                in_int = is_int
            entries = by_col[i] or [("OBJ", 0.0)]
            for e in entries:
                out.append(line("", cname[i], e[0], _num(e[1])))
        if in_int:
            out.append(f"    M{marker:07d}  'MARKER'                 'INTEND'")
        out.append("RHS")
        for k, row in enumerate(self.constraints):
            if row.rhs:
                out.append(line("", "RHS", rname[k], _num(row.rhs)))
        if self.constant:
            out.append(line("", "RHS", "OBJ", _num(-self.constant)))
        out.append("BOUNDS")
        for i, v in enumerate(self.variables):
            if v.kind == BINARY:
                if v.lower == 0 and v.upper == 1:
                    out.append(line("BV", "BND", cname[i]))
                else:
                    out.append(line("LO", "BND", cname[i], _num(v.lower)))
                    out.append(line("UP", "BND", cname[i], _num(v.upper)))
                continue
            if v.lower == -math.inf and v.upper == math.inf:
                out.append(line("FR", "BND", cname[i]))
                continue
            if v.lower == -math.inf:
                out.append(line("MI", "BND", cname[i]))
            elif v.lower != 0:
                out.append(line("LO", "BND", cname[i], _num(v.lower)))
            if v.upper != math.inf:
                out.append(line("UP", "BND", cname[i], _num(v.upper)))
        out.append("ENDATA")
        return "\n".join(out) + "\n"


def _num(x: float) -> str:
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _signed(x: float) -> str:
    return f"+ {_num(x)}" if x >= 0 else f"- {_num(-x)}"


def _terms(model: MilpModel, coeffs) -> str:
    parts = []
    for i, c in coeffs:
        if c == 0:
            continue
        parts.append(f"{_signed(c)} {model.variables[i].name}")
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else s


def export_model(model: MilpModel, fmt: str, path) -> None:
    """Write ``model`` as ``"lp"`` or ``"mps"`` text; names are checked first."""
    fmt = fmt.lower()
    if fmt == "lp":
        text = model.to_lp()
    elif fmt == "mps":
        text = model.to_mps()
    else:
        raise ModelError(f"unknown export format {fmt!r}")
    Path(path).write_text(text, encoding="ascii")


def read_assignment(path) -> dict:
    """Parse ``varname value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ModelError(f"{path}:{lineno}: expected 'name value'")
        out[parts[0]] = float(parts[1])
    return out


def write_assignment(assignment: dict, path) -> None:
    lines = [f"{name} {_num(value)}" for name, value in assignment.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
