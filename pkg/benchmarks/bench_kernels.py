"""Compare the numba kernels with the numpy fallback.

Each path runs in its own interpreter because the choice is fixed at import
time through PDPT_DISABLE_NUMBA. The child prints one JSON line of timings
(best of --repeat, after one warm-up call that also pays for compilation).

    python benchmarks/bench_kernels.py --requests 50 --repeat 5
"""
import argparse
import json
import os
import subprocess
import sys
import time


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def child(n_requests, repeat):
    import numpy as np

    from pdpt import _kernels
    from pdpt.generator import ATHENS, GeneratorParams, disc_pool, generate_instance
    from pdpt.insertion import FeasibilityCache, best_insertions
    from pdpt.operators import feature_matrix, mahalanobis_matrix
    from pdpt.routing import remove_requests
    from pdpt.search import initial_solution

    rng = np.random.default_rng(0)
    pool = disc_pool(rng, 2000, ATHENS, 5.0)
    inst = generate_instance(GeneratorParams(n_requests=n_requests, tw_class="M"), 1)
    sol = initial_solution(inst, np.random.default_rng(0))
    removed = list(range(0, n_requests, 5))
    partial = remove_requests(inst, sol, removed)
    X, cov = feature_matrix(inst)

    def scan():
        cache = FeasibilityCache(inst, partial)
        for r in removed:
            best_insertions(cache, r, 3)

    out = {
        "numba": _kernels.USE_NUMBA,
        "haversine_2000": best_of(lambda: _kernels.haversine_matrix(pool[:, 0], pool[:, 1]), repeat),
        "mahalanobis": best_of(lambda: mahalanobis_matrix(X, cov), repeat),
        "feasibility_cache": best_of(lambda: FeasibilityCache(inst, partial), repeat),
        "insertion_scan": best_of(scan, repeat),
    }
    print(json.dumps(out))


def run(flag, args):
    env = dict(os.environ, PDPT_DISABLE_NUMBA=flag)
    cmd = [sys.executable, __file__, "--child", "--requests", str(args.requests), "--repeat", str(args.repeat)]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--requests", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--child", action="store_true")
    args = ap.parse_args()
    if args.child:
        child(args.requests, args.repeat)
        return
    fast = run("0", args)
    slow = run("1", args)
    if not fast["numba"]:
        print("numba unavailable; both runs used the fallback")
    print(f"{'kernel':<20}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for key in fast:
        if key == "numba":
            continue
        a, b = fast[key] * 1e3, slow[key] * 1e3
        print(f"{key:<20}{a:>12.3f}{b:>12.3f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
