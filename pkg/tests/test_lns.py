import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import build
from pdpt.generator import GeneratorParams, generate_instance, tiny_params
from pdpt.insertion import insert_cheapest
from pdpt.milp.oracle import exact_oracle_solve
from pdpt.model import DELIVERY, DEPOT_DESTINATION, DEPOT_ORIGIN, PICKUP
from pdpt.operators import (
    SHAW_THETA,
    OperatorBank,
    feature_matrix,
    insertion_difficulty,
    insertion_ease,
    lahc_accept,
    mahalanobis_dissimilarity,
    mahalanobis_matrix,
    order_by,
    random_removal,
    regularized_covariance,
    related_removal,
    removal_gains,
    repair,
    shaw_dissimilarity,
    shaw_matrix,
    worst_removal,
)
from pdpt.routing import Solution, evaluate, remove_requests, validate_solution
from pdpt.search import ConstructionError, SearchConfig, initial_solution, run_search

DEPOTS = [DEPOT_ORIGIN, DEPOT_DESTINATION]


def two_requests():
    # t = 0.3 * distance: t(p0,p1) = 3, t(d0,d1) = 6, t(p0,d0) = 9, t(p1,d1) = 0.3 * sqrt(1000)
    return build(
        [(50, 50), (50, 50), (0, 0), (30, 0), (0, 10), (30, 20)],
        DEPOTS + [PICKUP, DELIVERY, PICKUP, DELIVERY],
        [(2, 3), (4, 5)], [(0, 1)],
        windows=[(0, 480), (0, 480), (30, 200), (120, 300), (90, 250), (150, 400)],
        qty=[10, 25],
    )


def five_requests():
    # per request: qty, p->d distance, service at p and d, window widths at p and d
    rows = [
        (10, 10, 0, 0, 100, 100),
        (30, 30, 5, 5, 50, 50),
        (20, 20, 10, 0, 100, 200),
        (40, 10, 0, 10, 200, 100),
        (50, 40, 10, 10, 50, 200),
    ]
    pts, kinds, wins, svc, reqs = [(0, 0), (0, 0)], list(DEPOTS), [(0, 480)] * 2, [0.0, 0.0], []
    for r, (q, dist, sp, sd, wp, wd) in enumerate(rows):
        pts += [(0, 100 * r), (dist, 100 * r)]
        kinds += [PICKUP, DELIVERY]
        wins += [(0, wp), (0, wd)]
        svc += [float(sp), float(sd)]
        reqs.append((2 + 2 * r, 3 + 2 * r))
    return build(pts, kinds, reqs, [(0, 1)], windows=wins, service=svc, qty=[r[0] for r in rows])


def test_default_coefficients():
    cfg = SearchConfig()
    assert cfg.shaw == SHAW_THETA == (0.33, 0.99, 0.66)
    assert (cfg.lahc_list_size, cfg.destroy_range, cfg.blink) == (20, (5, 15), 0.05)
    assert (cfg.worst_scale, cfg.alns_learning, cfg.reward_best, cfg.reward_accept) == (0.25, 0.3, 3.0, 1.0)
    assert (cfg.patience, cfg.restarts) == (50, 10)


@pytest.mark.parametrize("bad", [dict(blink=1.0), dict(destroy_range=(0, 3)), dict(lahc_list_size=0), dict(method="ga")])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        SearchConfig(**bad)


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"blink": 0.1, "temperature": 3}))
    with pytest.raises(ValueError, match="temperature"):
        SearchConfig.from_file(path)
    path.write_text(json.dumps({"blink": 0.1, "patience": 7}))
    assert SearchConfig.from_file(path, patience=None, seed=4).patience == 7


def two_pass_cov(X):
    mean = X.sum(axis=0) / len(X)
    acc = np.zeros((X.shape[1], X.shape[1]))
    for row in X:
        d = row - mean
        acc += np.outer(d, d)
    return acc / (len(X) - 1)


def test_covariance_matches_two_pass():
    inst = generate_instance(GeneratorParams(n_requests=25, tw_class="M"), 2)
    X, cov = feature_matrix(inst)
    assert X.shape == (25, 9)
    np.testing.assert_allclose(cov, two_pass_cov(X), rtol=1e-9, atol=1e-9)


def test_identical_requests_fall_back_to_ridge_identity():
    X = np.tile(np.arange(9.0), (4, 1))
    cov = regularized_covariance(X)
    assert cov[0, 0] > 0
    np.testing.assert_array_equal(cov, cov[0, 0] * np.eye(9))
    assert np.all(mahalanobis_matrix(X, cov) == 0)


def test_single_request_uses_identity():
    np.testing.assert_array_equal(regularized_covariance(np.ones((1, 9))), np.eye(9))


def test_constant_service_column_is_ridged():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 9))
    X[:, 7] = 5.0
    cov = regularized_covariance(X)
    assert np.linalg.matrix_rank(cov) == 9
    D = mahalanobis_matrix(X, cov)
    assert np.all(np.isfinite(D))


def test_mahalanobis_basic_properties():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(14, 9))
    cov = regularized_covariance(X, ridge=False)
    D = mahalanobis_matrix(X, cov)
    assert np.all(np.diag(D) == 0)
    np.testing.assert_allclose(D, D.T, atol=1e-12)
    for r, r2 in [(0, 1), (3, 7), (12, 5)]:
        assert D[r, r2] == pytest.approx(mahalanobis_dissimilarity(X, cov, r, r2), rel=1e-9)


def test_rescaling_one_column_keeps_distances():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(15, 9))
    D = mahalanobis_matrix(X, regularized_covariance(X, ridge=False))
    Y = X.copy()
    Y[:, 4] *= 10.0
    D2 = mahalanobis_matrix(Y, regularized_covariance(Y, ridge=False))
    np.testing.assert_allclose(D2, D, rtol=1e-9, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.floats(0.01, 100.0), min_size=9, max_size=9))
def test_mahalanobis_ranking_survives_column_scaling(seed, scale):
    X = np.random.default_rng(seed).normal(size=(13, 9))
    D = mahalanobis_matrix(X, regularized_covariance(X, ridge=False))
    Y = X * np.asarray(scale)
    D2 = mahalanobis_matrix(Y, regularized_covariance(Y, ridge=False))
    iu = np.triu_indices(13, 1)
    order = np.argsort(D[iu], kind="stable")
    # D2 listed in D's order must be non-decreasing, up to float noise
    assert np.all(np.diff(D2[iu][order]) >= -1e-7 * D.max())


def test_shaw_hand_value():
    inst = two_requests()
    # 0.33*15 + 0.99*(3 + 6) + 0.66*(60 + 30)
    assert shaw_dissimilarity(inst, 0, 1) == pytest.approx(73.26, abs=1e-9)
    assert shaw_dissimilarity(inst, 0, 0) == 0
    M = shaw_matrix(inst)
    assert M[0, 1] == M[1, 0] == pytest.approx(73.26, abs=1e-9)


def test_insertion_ease_hand_values():
    inst = two_requests()
    ie = insertion_ease(inst)
    assert ie[0] == pytest.approx(0.33 * 10 + 0.99 * 9 - 0.66 * (170 + 180), abs=1e-9)
    assert ie[0] == pytest.approx(-218.79, abs=1e-9)
    assert ie[1] == pytest.approx(0.33 * 25 + 0.99 * 0.3 * 1000 ** 0.5 - 0.66 * (160 + 250), abs=1e-9)


def test_zero_width_windows_drop_the_window_term():
    inst = build(
        [(0, 0), (0, 0), (0, 0), (20, 0)], DEPOTS + [PICKUP, DELIVERY], [(2, 3)], [(0, 1)],
        windows=[(0, 480), (0, 480), (60, 60), (90, 90)], qty=12,
    )
    assert insertion_ease(inst)[0] == pytest.approx(0.33 * 12 + 0.99 * 6)


def test_wider_windows_lower_ease():
    base = two_requests()
    wins = [(loc.tw_open, loc.tw_close) for loc in base.locations]
    wins[2] = (30, 260)
    wider = build([(loc.x, loc.y) for loc in base.locations], [loc.kind for loc in base.locations],
                  [(2, 3), (4, 5)], [(0, 1)], windows=wins, qty=[10, 25])
    assert insertion_ease(wider)[0] < insertion_ease(base)[0]
    assert insertion_ease(wider)[1] == insertion_ease(base)[1]


def test_insertion_difficulty_hand_values():
    inst = five_requests()
    expected = [-2 / 3, 13 / 6, 1 / 4, 5 / 12, 3.0]
    np.testing.assert_allclose(insertion_difficulty(inst), expected, atol=1e-12)
    assert order_by(insertion_difficulty(inst), range(5)) == [4, 1, 3, 2, 0]


def test_identical_requests_have_zero_difficulty():
    inst = build(
        [(0, 0), (0, 0), (0, 0), (20, 0), (0, 0), (20, 0)], DEPOTS + [PICKUP, DELIVERY] * 2,
        [(2, 3), (4, 5)], [(0, 1)],
    )
    assert list(insertion_difficulty(inst)) == [0.0, 0.0]


def test_extreme_request_reaches_upper_bound():
    inst = build(
        [(0, 0), (0, 0), (0, 0), (40, 0), (0, 50), (10, 50)], DEPOTS + [PICKUP, DELIVERY] * 2,
        [(2, 3), (4, 5)], [(0, 1)],
        windows=[(0, 480), (0, 480), (0, 30), (0, 30), (0, 300), (0, 300)],
        service=[0, 0, 10, 10, 3, 3], qty=[50, 5],
    )
    np.testing.assert_allclose(insertion_difficulty(inst), [4.0, -2.0])


@pytest.fixture(scope="module")
def clustered():
    # cluster A near the origin, cluster B 200 hm away; one vehicle per cluster
    pts = [(0, 0), (200, 200), (0, 0), (200, 200)]
    kinds = [DEPOT_ORIGIN, DEPOT_ORIGIN, DEPOT_DESTINATION, DEPOT_DESTINATION]
    reqs = []
    for base in ((0, 0), (0, 0), (0, 0), (200, 200), (200, 200), (200, 200)):
        j = len(reqs)
        pts += [(base[0] + j % 3, base[1] + 5), (base[0] + 5, base[1] + j % 3)]
        kinds += [PICKUP, DELIVERY]
        reqs.append((len(pts) - 2, len(pts) - 1))
    inst = build(pts, kinds, reqs, [(0, 2), (1, 3)])
    sol = insert_cheapest(inst, Solution.empty(inst), range(6), transfers=False)
    return inst, sol


def test_related_removal_takes_a_whole_cluster(clustered):
    inst, sol = clustered
    D = shaw_matrix(inst)
    seen = set()
    for seed in range(20):
        removed, part = related_removal(inst, sol, 3, D, np.random.default_rng(seed))
        first = removed[0]
        cluster = {0, 1, 2} if first < 3 else {3, 4, 5}
        assert set(removed) == cluster
        assert part.served() == set(range(6)) - cluster
        seen.add(first < 3)
    assert seen == {True, False}


def test_related_removal_everything_and_determinism(clustered):
    inst, sol = clustered
    D = shaw_matrix(inst)
    removed, part = related_removal(inst, sol, 6, D, np.random.default_rng(0))
    assert sorted(removed) == list(range(6)) and not part.served()
    a = related_removal(inst, sol, 4, D, np.random.default_rng(9))[0]
    b = related_removal(inst, sol, 4, D, np.random.default_rng(9))[0]
    assert a == b


def test_random_removal(clustered):
    inst, sol = clustered
    assert random_removal(inst, sol, 0, np.random.default_rng(0))[0] == []
    removed, part = random_removal(inst, sol, 4, np.random.default_rng(3))
    assert len(set(removed)) == 4 and part.served() == set(range(6)) - set(removed)
    counts = np.zeros(6)
    rng = np.random.default_rng(4)
    for _ in range(600):
        counts[random_removal(inst, sol, 1, rng)[0][0]] += 1
    assert counts.min() > 60


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_worst_removal_takes_largest_gain(seed):
    inst = generate_instance(GeneratorParams(n_requests=25, tw_class="L"), seed)
    sol = initial_solution(inst, np.random.default_rng(seed))
    base = evaluate(inst, sol)
    gains = {r: base - evaluate(inst, remove_requests(inst, sol, [r])) for r in range(25)}
    assert removal_gains(inst, sol) == pytest.approx(gains, abs=1e-9)
    removed, _ = worst_removal(inst, sol, 1, 0.0, np.random.default_rng(seed))
    assert removed == [max(gains, key=gains.get)]
    assert worst_removal(inst, sol, 0, 0.25, np.random.default_rng(0))[0] == []


def test_repair_without_blinks_is_cheapest_insertion():
    inst = generate_instance(GeneratorParams(n_requests=25, tw_class="M"), 6)
    sol = initial_solution(inst, np.random.default_rng(0))
    part = remove_requests(inst, sol, [3, 8, 13, 21])
    order = [21, 3, 13, 8]
    a = repair(inst, part, order, 0.0, np.random.default_rng(0))
    b = insert_cheapest(inst, part, order)
    assert a.routes == b.routes


@pytest.mark.parametrize("seed", range(4))
def test_reinserting_into_an_optimum_restores_it(seed):
    inst = generate_instance(tiny_params(3, "L"), seed)
    opt = exact_oracle_solve(inst)
    for r in range(3):
        part = remove_requests(inst, opt, [r])
        again = repair(inst, part, [r], 0.0, np.random.default_rng(0))
        assert again is not None
        assert again.objective(inst) == pytest.approx(opt.objective(inst), abs=1e-9)


def test_blinking_repair_stays_feasible():
    inst = generate_instance(GeneratorParams(n_requests=25, tw_class="S"), 1)
    sol = initial_solution(inst, np.random.default_rng(0))
    rng = np.random.default_rng(5)
    for _ in range(10):
        removed = [int(r) for r in rng.choice(25, 6, replace=False)]
        out = repair(inst, remove_requests(inst, sol, removed), removed, 0.5, rng)
        if out is not None:
            assert validate_solution(inst, out) == []


def test_lahc_scripted_sequence():
    ring = [10.0] * 3
    cur = 10.0
    outcome = []
    for v, cand in enumerate([9.0, 10.0, 11.0, 9.5, 10.0, 10.5], start=1):
        ok, cur = lahc_accept(ring, cur, cand, v)
        outcome.append((ok, cur, list(ring)))
    assert outcome == [
        (True, 9.0, [10.0, 9.0, 10.0]),
        (True, 10.0, [10.0, 9.0, 10.0]),
        (False, 10.0, [10.0, 9.0, 10.0]),
        (True, 9.5, [10.0, 9.5, 10.0]),
        (True, 10.0, [10.0, 9.5, 10.0]),
        (False, 10.0, [10.0, 9.5, 10.0]),
    ]


def test_lahc_accepts_worse_than_current_when_ring_allows():
    ring = [20.0, 20.0]
    ok, cur = lahc_accept(ring, 15.0, 18.0, 0)
    assert ok and cur == 18.0 and ring == [18.0, 20.0]


def test_silent_operator_decays_geometrically():
    bank = OperatorBank(("a", "b"), alpha=0.3, floor=1e-3)
    for s in range(1, 30):
        bank.uses[:] = 1
        bank.reward(0, 3.0)
        bank.end_segment()
        if s <= 5:
            assert bank.weights[1] == pytest.approx(0.7 ** s)
    assert bank.weights[1] == 1e-3
    assert bank.weights[0] == pytest.approx(3.0, abs=1e-3)
    assert bank.probabilities.sum() == pytest.approx(1.0)
    assert bank.probabilities[0] > 0.999


def test_bank_selection_follows_weights():
    bank = OperatorBank(("a", "b", "c"), weights=np.array([1.0, 2.0, 7.0]))
    rng = np.random.default_rng(0)
    counts = np.bincount([bank.select(rng) for _ in range(5000)], minlength=3)
    np.testing.assert_allclose(counts / 5000, [0.1, 0.2, 0.7], atol=0.03)
    assert list(bank.uses) == list(counts)


@pytest.fixture(scope="module")
def small():
    return generate_instance(GeneratorParams(n_requests=25, tw_class="M"), 11)


@pytest.mark.parametrize("method", ["rlns", "ls", "multiop"])
def test_search_is_valid_monotone_and_deterministic(small, method):
    cfg = SearchConfig(method=method, restarts=2, patience=8, seed=3)
    a = run_search(small, cfg)
    b = run_search(small, cfg)
    assert validate_solution(small, a.best) == []
    assert a.best_cost == pytest.approx(evaluate(small, a.best))
    # exact reproduction; repr makes failed repairs (nan) compare equal
    assert [repr((t.cost, t.accepted, t.best)) for t in a.trace] == [repr((t.cost, t.accepted, t.best)) for t in b.trace]
    for res in a.restarts:
        bests = [t.best for t in res.trace]
        assert all(x >= y for x, y in zip(bests, bests[1:]))
        assert res.best_cost <= res.initial_cost
        assert validate_solution(small, res.best) == []


def test_restart_results_do_not_depend_on_workers(small):
    one = run_search(small, SearchConfig(restarts=2, patience=5, seed=1))
    two = run_search(small, SearchConfig(restarts=2, patience=5, seed=1, workers=2))
    assert [r.best_cost for r in one.restarts] == [r.best_cost for r in two.restarts]


def test_single_request_starts_optimal():
    inst = generate_instance(tiny_params(1, "L"), 0)
    res = run_search(inst, SearchConfig(restarts=1, patience=5))
    assert res.restarts[0].trace[0].cost == pytest.approx(exact_oracle_solve(inst).objective(inst))


def test_unconstructible_instance_raises():
    # the delivery window closes before the pickup can be reached
    inst = build(
        [(0, 0), (0, 0), (300, 0), (600, 0)], DEPOTS + [PICKUP, DELIVERY], [(2, 3)], [(0, 1)],
        windows=[(0, 480), (0, 480), (0, 480), (0, 50)],
    )
    with pytest.raises(ConstructionError, match="no feasible initial solution"):
        run_search(inst, SearchConfig(restarts=1))


def test_trace_file_columns(small, tmp_path):
    res = run_search(small, SearchConfig(restarts=1, patience=3))
    res.write_trace(tmp_path / "trace.csv")
    with open(tmp_path / "trace.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["restart", "iteration", "cost", "accepted", "best"]
    assert len(rows) == 1 + len(res.trace)
