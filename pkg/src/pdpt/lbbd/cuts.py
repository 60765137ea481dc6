"""Benders cuts over master edge sets."""
from __future__ import annotations

from dataclasses import dataclass

OPTIMALITY = "optimality"
FEASIBILITY = "feasibility"


@dataclass(frozen=True)
class BendersCut:
    kind: str
    edges: tuple
    bound: float = 0.0

    def __post_init__(self):
        if not self.edges:
            raise ValueError("a Benders cut needs a non-empty edge set")
        if self.kind not in (OPTIMALITY, FEASIBILITY):
            raise ValueError(f"unknown cut kind {self.kind!r}")

    def row(self, master, name: str = ""):
        """``(coeffs, sense, rhs, name)`` over the master's variables."""
        xs = [master.x[e] for e in self.edges]
        n = len(self.edges)
        if self.kind == OPTIMALITY:
            # z >= bound - bound * (|E| - sum x)
            coeffs = [(master.z, 1.0)] + [(v, -self.bound) for v in xs]
            return coeffs, ">=", self.bound - self.bound * n, name
        return [(v, 1.0) for v in xs], "<=", float(n - 1), name

    def rhs_at(self, selected) -> float:
        """Right-hand side of an optimality cut for the edge set ``selected``."""
        hit = sum(1 for e in self.edges if e in selected)
        return self.bound - self.bound * (len(self.edges) - hit)

    def excludes(self, selected) -> bool:
        """Whether a feasibility cut forbids an edge set that contains ``selected``."""
        return self.kind == FEASIBILITY and all(e in selected for e in self.edges)


def make_optimality_cut(edges, bound: float) -> BendersCut:
    return BendersCut(OPTIMALITY, tuple(sorted(edges)), float(bound))


def make_feasibility_cut(edges) -> BendersCut:
    return BendersCut(FEASIBILITY, tuple(sorted(edges)))
