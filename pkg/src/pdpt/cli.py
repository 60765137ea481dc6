"""Command line: ``pdpt gen|solve|validate|bench|export-model``.

Exit codes: 0 success, 1 infeasible or failed run, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .bench import load_suite_config, run_benchmark
from .generator import GenerationError, GeneratorParams, generate_instance
from .lbbd import NoFeasibleSolution, branch_and_check, build_master
from .milp.backends import CapabilityError, get_backend
from .milp.model import export_model
from .milp.oracle import OracleInfeasible, OracleSizeError, exact_oracle_solve
from .model import (
    InstanceFormatError,
    InstanceValidationError,
    instance_from_dict,
    load_instance,
    save_instance,
    validate_instance,
)
from .routing import load_solution, save_solution, validate_solution
from .search import METHODS, ConstructionError, SearchConfig, run_search

FAILURES = (
    OracleSizeError,
    OracleInfeasible,
    NoFeasibleSolution,
    ConstructionError,
    GenerationError,
    CapabilityError,
    InstanceFormatError,
    InstanceValidationError,
    FileNotFoundError,
    # malformed JSON, suite or search configuration files
    ValueError,
)


def _emit(doc: dict) -> None:
    json.dump(doc, sys.stdout, indent=1)
    sys.stdout.write("\n")


def cmd_gen(args) -> int:
    params = replace(
        GeneratorParams(),
        n_requests=args.requests,
        tw_class=args.tw,
        n_vehicles=args.vehicles,
        n_transfers=args.transfers,
        node_file=args.node_file,
        radius_km=args.radius,
    )
    seeds = range(args.seed, args.seed + args.count)
    out = Path(args.output)
    if args.count > 1:
        out.mkdir(parents=True, exist_ok=True)
    for s in seeds:
        inst = generate_instance(params, s)
        path = out / f"{inst.name}.json" if args.count > 1 else out
        save_instance(inst, path)
        print(f"{path}: {len(inst.requests)} requests, {len(inst.vehicles)} vehicles, {len(inst.transfer_ids)} transfers")
    return 0


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    if args.method == "oracle":
        sol = exact_oracle_solve(inst)
        doc = {"method": "oracle", "objective": sol.objective(inst)}
    elif args.method == "lbbd":
        warm = load_solution(args.warm_start) if args.warm_start else None
        options = {"command": args.command} if args.backend == "external-file" else {}
        backend = get_backend(args.backend, **options)
        res = branch_and_check(inst, backend, warm_start=warm, time_limit=args.time_limit)
        sol = res.solution
        doc = {"method": "lbbd", "backend": args.backend, **res.to_dict()}
        if warm is not None:
            doc["warm_start_cost"] = warm.objective(inst)
        if args.cut_log:
            res.write_cut_log(args.cut_log)
    else:
        if args.config:
            cfg = SearchConfig.from_file(args.config, method=args.method, seed=args.seed,
                                         restarts=args.restarts, patience=args.patience)
        else:
            cfg = SearchConfig(method=args.method, seed=args.seed, restarts=args.restarts or 10,
                               patience=args.patience or 50)
        res = run_search(inst, cfg)
        sol = res.best
        doc = {
            "method": args.method,
            "objective": res.best_cost,
            "restarts": [{"restart": r.restart, "best": r.best_cost, "initial": r.initial_cost,
                          "iterations": r.iterations, "seconds": r.seconds} for r in res.restarts],
        }
        if args.trace:
            res.write_trace(args.trace)
    if args.output and sol is not None:
        save_solution(inst, sol, args.output)
    _emit(doc)
    return 0 if sol is not None else 1


def cmd_validate(args) -> int:
    if args.solution is None:
        # parse without validating so every violation gets listed
        doc = json.loads(Path(args.instance).read_text(encoding="utf-8"))
        issues = validate_instance(instance_from_dict(doc, validate=False))
    else:
        inst = load_instance(args.instance)
        issues = validate_solution(inst, load_solution(args.solution))
    for v in issues:
        print(v)
    print("ok" if not issues else f"{len(issues)} violation(s)")
    return 0 if not issues else 1


def cmd_bench(args) -> int:
    if args.suite:
        cfg = load_suite_config(args.suite)
    else:
        if not args.instances:
            raise _Usage("bench needs --suite or instance files")
        cfg = {"instances": [load_instance(p) for p in args.instances], "methods": METHODS,
               "restarts": 10, "patience": 50, "seed": 0, "overrides": {}, "workers": 1}
    for key in ("restarts", "patience", "seed", "workers"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    if args.methods:
        cfg["methods"] = tuple(args.methods)
    report = run_benchmark(
        cfg["instances"], cfg["methods"], cfg["restarts"], cfg["patience"], cfg["seed"],
        cfg["workers"], cfg["overrides"], out=args.output,
    )
    if args.output is None:
        sys.stdout.write(report.to_csv())
    for inst, method, k, msg in report.failures:
        print(f"{inst} {method} restart {k}: {msg}", file=sys.stderr)
    return 0


def cmd_export(args) -> int:
    inst = load_instance(args.instance)
    mm = build_master(inst, fix=args.fix)
    export_model(mm.model, args.format, args.output)
    print(f"{args.output}: {mm.model.n_vars} variables, {mm.model.n_rows} rows")
    return 0


class _Usage(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdpt", description="Pickup and delivery with transfers")
    sub = p.add_subparsers(dest="command_name", required=True)

    g = sub.add_parser("gen", help="generate instances")
    g.add_argument("--requests", type=int, default=25)
    g.add_argument("--tw", choices=("S", "M", "L"), default="L")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=1, help="instances with consecutive seeds; -o is then a folder")
    g.add_argument("--vehicles", type=int, help="fixed fleet size instead of the search")
    g.add_argument("--transfers", type=int)
    g.add_argument("--node-file", help="CSV with id,lat,lon")
    g.add_argument("--radius", type=float, default=5.0, help="disc radius in km")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("instance")
    s.add_argument("--method", choices=(*METHODS, "lbbd", "oracle"), default="rlns")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--config", help="JSON search configuration")
    s.add_argument("--time-limit", type=float)
    s.add_argument("--warm-start", help="solution file used to seed lbbd")
    s.add_argument("--backend", choices=("builtin", "highs", "external-file"), default="builtin")
    s.add_argument("--command", help="external solver template with {model} and {solution}")
    s.add_argument("--trace", help="CSV trace of the search")
    s.add_argument("--cut-log", help="CSV log of Benders cuts")
    s.add_argument("-o", "--output", help="write the best solution here")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate", help="check an instance, or a solution against it")
    v.add_argument("instance")
    v.add_argument("solution", nargs="?")
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="run the LNS methods over a suite")
    b.add_argument("instances", nargs="*")
    b.add_argument("--suite", help="JSON suite file")
    b.add_argument("--methods", nargs="+", choices=METHODS)
    b.add_argument("--restarts", type=int)
    b.add_argument("--patience", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("-o", "--output", help="CSV path; stdout when omitted")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("export-model", help="write the master MILP as LP or MPS")
    e.add_argument("instance")
    e.add_argument("--format", choices=("lp", "mps"), default="lp")
    e.add_argument("--fix", choices=("omit", "bound"), default="omit")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.command_name == "solve" and args.backend == "external-file" and args.method == "lbbd" and not args.command:
        parser.print_usage(sys.stderr)
        print("pdpt: error: --backend external-file needs --command", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"pdpt: error: {exc}", file=sys.stderr)
        return 2
    except FAILURES as exc:
        print(f"pdpt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
