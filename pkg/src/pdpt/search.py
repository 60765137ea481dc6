"""Large neighborhood search with late acceptance: rLNS, LS and MULTI-OP."""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .insertion import insert_cheapest
from .model import Instance
from .operators import (
    SHAW_THETA,
    OperatorBank,
    feature_matrix,
    insertion_difficulty,
    insertion_ease,
    lahc_accept,
    mahalanobis_matrix,
    order_by,
    random_removal,
    related_removal,
    repair,
    shaw_matrix,
    worst_removal,
)
from .routing import Solution

METHODS = ("rlns", "ls", "multiop")
IMPROVE_TOL = 1e-9


class ConstructionError(RuntimeError):
    pass


@dataclass
class SearchConfig:
    method: str = "rlns"
    lahc_list_size: int = 20
    destroy_range: tuple = (5, 15)
    blink: float = 0.05
    shaw: tuple = SHAW_THETA
    worst_scale: float = 0.25
    alns_learning: float = 0.3
    reward_best: float = 3.0
    reward_accept: float = 1.0
    patience: int = 50
    restarts: int = 10
    seed: int = 0
    segment: int = 50
    weight_floor: float = 1e-3
    max_iterations: int | None = None
    transfers: bool = True
    workers: int = 1

    def __post_init__(self):
        self.destroy_range = tuple(int(x) for x in self.destroy_range)
        self.shaw = tuple(float(x) for x in self.shaw)
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0.0 <= self.blink < 1.0:
            raise ValueError("blink rate must lie in [0, 1)")
        if self.destroy_range[0] < 1 or self.destroy_range[0] > self.destroy_range[1]:
            raise ValueError("destroy range must satisfy 1 <= n_min <= n_max")
        if self.lahc_list_size < 1 or self.patience < 1 or self.restarts < 1:
            raise ValueError("list size, patience and restarts must be positive")

    @classmethod
    def from_file(cls, path, **overrides) -> "SearchConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)


@dataclass
class TraceRow:
    restart: int
    iteration: int
    cost: float
    accepted: bool
    best: float


@dataclass
class RestartResult:
    restart: int
    best: Solution
    best_cost: float
    initial_cost: float
    iterations: int
    seconds: float
    trace: list = field(default_factory=list)


@dataclass
class SearchResult:
    best: Solution
    best_cost: float
    restarts: list

    @property
    def trace(self) -> list:
        return [row for res in self.restarts for row in res.trace]

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["restart", "iteration", "cost", "accepted", "best"])
            for row in self.trace:
                w.writerow([row.restart, row.iteration, repr(row.cost), int(row.accepted), repr(row.best)])


def initial_solution(instance: Instance, rng, transfers: bool = True, retries: int = 20) -> Solution:
    """Cheapest insertion by decreasing difficulty, then random orders."""
    empty = Solution.empty(instance)
    order = order_by(insertion_difficulty(instance), range(len(instance.requests)))
    sol = insert_cheapest(instance, empty, order, transfers)
    for _ in range(retries):
        if sol is not None:
            return sol
        sol = insert_cheapest(instance, empty, [int(r) for r in rng.permutation(len(instance.requests))], transfers)
    if sol is None:
        raise ConstructionError("no feasible initial solution")
    return sol


class _Context:
    """Per-instance data shared by all restarts of one method."""

    def __init__(self, instance: Instance, cfg: SearchConfig):
        self.difficulty = insertion_difficulty(instance)
        if cfg.method == "ls":
            self.related = shaw_matrix(instance, cfg.shaw)
            self.ease = insertion_ease(instance, cfg.shaw)
        else:
            X, cov = feature_matrix(instance)
            self.related = mahalanobis_matrix(X, cov)


def _destroy_size(cfg: SearchConfig, n_req: int, rng) -> int:
    hi = min(cfg.destroy_range[1], n_req)
    lo = min(cfg.destroy_range[0], hi)
    return int(rng.integers(lo, hi + 1))


def run_restart(instance: Instance, cfg: SearchConfig, restart: int, ctx: _Context | None = None) -> RestartResult:
    rng = np.random.default_rng([cfg.seed, restart])
    ctx = ctx or _Context(instance, cfg)
    started = time.perf_counter()
    current = initial_solution(instance, rng, cfg.transfers)
    cur_cost = current.objective(instance)
    best, best_cost = current, cur_cost
    ring = [cur_cost] * cfg.lahc_list_size
    trace = [TraceRow(restart, 0, cur_cost, True, best_cost)]
    n_req = len(instance.requests)
    destroy_bank = OperatorBank(("random", "worst", "related"), cfg.alns_learning, cfg.weight_floor)
    order_bank = OperatorBank(("random", "difficulty"), cfg.alns_learning, cfg.weight_floor)

    v, stale = 0, 0
    while n_req and stale < cfg.patience:
        if cfg.max_iterations is not None and v >= cfg.max_iterations:
            break
        v += 1
        n = _destroy_size(cfg, n_req, rng)
        d_op = o_op = None
        if cfg.method == "multiop":
            d_op = destroy_bank.select(rng)
            o_op = order_bank.select(rng)
            if d_op == 0:
                removed, partial = random_removal(instance, current, n, rng)
            elif d_op == 1:
                removed, partial = worst_removal(instance, current, n, cfg.worst_scale, rng)
            else:
                removed, partial = related_removal(instance, current, n, ctx.related, rng)
            order = [int(r) for r in rng.permutation(removed)] if o_op == 0 else order_by(ctx.difficulty, removed)
        else:
            removed, partial = related_removal(instance, current, n, ctx.related, rng)
            scores = ctx.ease if cfg.method == "ls" else ctx.difficulty
            order = order_by(scores, removed)

        cand = repair(instance, partial, order, cfg.blink, rng, cfg.transfers)
        if cand is None:
            stale += 1
            lahc_accept(ring, cur_cost, np.inf, v)
            trace.append(TraceRow(restart, v, float("nan"), False, best_cost))
            if cfg.method == "multiop" and v % cfg.segment == 0:
                destroy_bank.end_segment()
                order_bank.end_segment()
            continue
        cand_cost = cand.objective(instance)
        accepted, cur_cost = lahc_accept(ring, cur_cost, cand_cost, v)
        if accepted:
            current = cand
        improved = cand_cost < best_cost - IMPROVE_TOL
        if improved:
            best, best_cost = cand, cand_cost
            stale = 0
        else:
            stale += 1
        if cfg.method == "multiop":
            gain = cfg.reward_best if improved else (cfg.reward_accept if accepted else 0.0)
            destroy_bank.reward(d_op, gain)
            order_bank.reward(o_op, gain)
            if v % cfg.segment == 0:
                destroy_bank.end_segment()
                order_bank.end_segment()
        trace.append(TraceRow(restart, v, cand_cost, accepted, best_cost))
    return RestartResult(restart, best, best_cost, trace[0].cost, v, time.perf_counter() - started, trace)


def _restart_job(args):
    instance, cfg, restart = args
    return run_restart(instance, cfg, restart)


def run_search(instance: Instance, config: SearchConfig | None = None) -> SearchResult:
    """Independent restarts; returns the best solution over all of them."""
    cfg = config or SearchConfig()
    if cfg.workers > 1 and cfg.restarts > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_restart_job, [(instance, cfg, k) for k in range(cfg.restarts)]))
    else:
        ctx = _Context(instance, cfg)
        results = [run_restart(instance, cfg, k, ctx) for k in range(cfg.restarts)]
    top = min(results, key=lambda res: (res.best_cost, res.restart))
    return SearchResult(top.best, top.best_cost, results)


def config_dict(cfg: SearchConfig) -> dict:
    return asdict(cfg)
