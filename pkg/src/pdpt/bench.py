"""Benchmark harness: K restarts per (instance, method), Best/Avg UB and time."""
from __future__ import annotations

import csv
import io
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import Instance, load_instance
from .search import METHODS, ConstructionError, SearchConfig, _Context, run_restart

COLUMNS = ("instance", "tw", "variant", "method", "best_ub", "avg_ub", "avg_time_s")
_NAME = re.compile(r"-([SML])(\d+)-")


@dataclass
class BenchmarkRow:
    instance: str
    tw: str
    variant: str
    method: str
    best_ub: float
    avg_ub: float
    avg_time_s: float
    restarts: int
    failed: list = field(default_factory=list)  # (restart, message)

    def cells(self) -> list:
        def num(v):
            return "" if not np.isfinite(v) else f"{v:.6f}"

        return [self.instance, self.tw, self.variant, self.method, num(self.best_ub), num(self.avg_ub), f"{self.avg_time_s:.4f}"]


@dataclass
class BenchmarkReport:
    rows: list

    def row(self, instance: str, method: str) -> BenchmarkRow:
        for r in self.rows:
            if r.instance == instance and r.method == method:
                return r
        raise KeyError((instance, method))

    @property
    def failures(self) -> list:
        return [(r.instance, r.method, k, msg) for r in self.rows for k, msg in r.failed]

    def to_csv(self, timings: bool = True) -> str:
        """CSV text; ``timings=False`` blanks the time column for reproducible diffs."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            cells = r.cells()
            if not timings:
                cells[-1] = ""
            w.writerow(cells)
        return buf.getvalue()

    def write_csv(self, path, timings: bool = True) -> None:
        Path(path).write_text(self.to_csv(timings), encoding="utf-8")


def tw_labels(name: str) -> tuple[str, str]:
    """Time-window class and width parsed from a generated instance name."""
    m = _NAME.search(name)
    return (m.group(1), m.group(2)) if m else ("", "")


def _job(args):
    instance, cfg, restart = args
    try:
        res = run_restart(instance, cfg, restart)
    except ConstructionError as exc:
        return restart, None, 0.0, str(exc)
    return restart, res.best_cost, res.seconds, None


def _summarise(instance: Instance, method: str, outcomes) -> BenchmarkRow:
    outcomes = sorted(outcomes, key=lambda o: o[0])
    costs = [c for _, c, _, err in outcomes if err is None]
    times = [t for _, c, t, err in outcomes if err is None]
    failed = [(k, err) for k, _, _, err in outcomes if err is not None]
    tw, variant = tw_labels(instance.name)
    best = min(costs) if costs else np.inf
    # rounding in the mean must not put it below the best
    avg = max(float(np.mean(costs)), best) if costs else np.inf
    return BenchmarkRow(instance.name, tw, variant, method, best, avg,
                        float(np.mean(times)) if times else 0.0, len(outcomes), failed)


def run_benchmark(
    instances,
    methods=METHODS,
    restarts: int = 10,
    patience: int = 50,
    seed: int = 0,
    workers: int = 1,
    overrides: dict | None = None,
    out=None,
) -> BenchmarkReport:
    """Run every method on every instance.

    ``overrides`` maps a method name to extra ``SearchConfig`` fields. A
    restart whose construction fails is recorded in the row and left out
    of the averages. With ``workers > 1`` restarts run in a process pool;
    results do not depend on the worker count.
    """
    overrides = overrides or {}
    plan = []
    for inst in instances:
        for method in methods:
            cfg = SearchConfig(method=method, restarts=restarts, patience=patience, seed=seed)
            if overrides.get(method):
                cfg = replace(cfg, **overrides[method])
            plan.append((inst, method, cfg))

    rows = []
    if workers > 1:
        jobs = [(inst, cfg, k) for inst, _, cfg in plan for k in range(cfg.restarts)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_job, jobs))
        pos = 0
        for inst, method, cfg in plan:
            rows.append(_summarise(inst, method, done[pos : pos + cfg.restarts]))
            pos += cfg.restarts
    else:
        for inst, method, cfg in plan:
            ctx = _Context(inst, cfg)
            outcomes = []
            for k in range(cfg.restarts):
                try:
                    res = run_restart(inst, cfg, k, ctx)
                    outcomes.append((k, res.best_cost, res.seconds, None))
                except ConstructionError as exc:
                    outcomes.append((k, None, 0.0, str(exc)))
            rows.append(_summarise(inst, method, outcomes))
    report = BenchmarkReport(rows)
    if out is not None:
        report.write_csv(out)
    return report


def load_suite_config(path) -> dict:
    """Read a suite file: ``instances`` (paths, relative to the file) plus
    optional ``methods``, ``restarts``, ``patience``, ``seed`` and ``overrides``."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    if "instances" not in raw or not raw["instances"]:
        raise ValueError("suite config needs a non-empty 'instances' list")
    unknown = set(raw) - {"instances", "methods", "restarts", "patience", "seed", "overrides", "workers"}
    if unknown:
        raise ValueError(f"unknown suite keys {sorted(unknown)}")
    methods = tuple(raw.get("methods", METHODS))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}")
    return {
        "instances": [load_instance(path.parent / p) for p in raw["instances"]],
        "methods": methods,
        "restarts": int(raw.get("restarts", 10)),
        "patience": int(raw.get("patience", 50)),
        "seed": int(raw.get("seed", 0)),
        "overrides": raw.get("overrides", {}),
        "workers": int(raw.get("workers", 1)),
    }
