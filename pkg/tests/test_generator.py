import numpy as np
import pytest

from helpers import direct_route_ok, greedy_serves, km_between
from pdpt.generator import (
    ATHENS,
    Draft,
    GenerationError,
    GeneratorParams,
    direct_trip_feasible,
    disc_pool,
    fleet_size_binary_search,
    generate_instance,
    kmeans_transfers,
    pdp_feasible,
    tiny_params,
)
from pdpt.model import DELIVERY, DEPOT_DESTINATION, DEPOT_ORIGIN, PICKUP, Instance, Location, Request, Vehicle, dumps_instance
from pdpt.routing import DELIVER, END, PICKUP as PICK_UP, START, Solution, Stop, compute_schedule


def test_widths_and_transfer_counts():
    assert GeneratorParams(n_requests=25).transfer_count == 3
    assert GeneratorParams(n_requests=50).transfer_count == 4
    assert GeneratorParams(n_requests=100).transfer_count == 6
    with pytest.raises(ValueError):
        GeneratorParams(tw_class="XL")


@pytest.mark.parametrize("tw", "SML")
def test_generated_instance_shape(tw):
    inst = generate_instance(GeneratorParams(n_requests=25, tw_class=tw), 7)
    assert len(inst.requests) == 25 and len(inst.transfer_ids) == 3
    widths = {loc.tw_close - loc.tw_open for loc in inst.locations if loc.kind in (PICKUP, DELIVERY) and loc.tw_close < 480}
    allowed = {"S": {60, 90}, "M": {90, 120}, "L": {120, 150}}[tw]
    assert len(widths) == 1 and widths <= allowed
    for loc in inst.locations:
        if loc.kind in (PICKUP, DELIVERY):
            assert loc.tw_open % 30 == 0 and loc.tw_open <= 450
            assert 3 <= loc.service <= 10
    assert all(5 <= r.qty <= 25 for r in inst.requests)
    assert all(v.capacity == 75 for v in inst.vehicles)
    for r in range(25):
        assert direct_route_ok(inst, r)


def test_same_seed_same_bytes():
    params = GeneratorParams(n_requests=25, tw_class="M")
    assert dumps_instance(generate_instance(params, 42)) == dumps_instance(generate_instance(params, 42))
    assert dumps_instance(generate_instance(params, 42)) != dumps_instance(generate_instance(params, 43))


def one_vehicle(points, windows, service, speed=20.0, horizon=480.0):
    kinds = [DEPOT_ORIGIN, PICKUP, DELIVERY, DEPOT_DESTINATION]
    locs = [Location(j, k, *pt, *w, s) for j, (k, pt, w, s) in enumerate(zip(kinds, points, windows, service))]
    return Instance("probe", locs, [Request(0, 1, 2, 5.0)], [Vehicle(0, 0, 3, 75.0)], [], "haversine", speed, horizon)


def test_direct_trip_decision_matches_schedule_oracle():
    rng = np.random.default_rng(0)
    pool = disc_pool(rng, 500, ATHENS, 5.0)
    agree = accepted = 0
    n = 10_000
    for _ in range(n):
        o, p, d, e = pool[rng.choice(500, 4, replace=False)]
        lp, ld = rng.choice(np.arange(0, 451, 30), 2)
        w = rng.choice([60, 90, 120, 150])
        tw_p, tw_d = (lp, min(lp + w, 480)), (ld, min(ld + w, 480))
        st_p, st_d = rng.integers(3, 11, 2)
        m = [km_between(a, b) * 3.0 for a, b in ((o, p), (p, d), (d, e))]
        fast = direct_trip_feasible(m[0], m[1] + st_p, m[2] + st_d, *tw_p, *tw_d, 480.0)
        inst = one_vehicle([o, p, d, e], [(0, 480), tw_p, tw_d, (0, 480)], [0, st_p, st_d, 0])
        route = [Stop(0, ((START, None),)), Stop(1, ((PICK_UP, 0),)), Stop(2, ((DELIVER, 0),)), Stop(3, ((END, None),))]
        slow = compute_schedule(inst, Solution([route])).feasible
        agree += fast == slow
        accepted += fast
    assert agree == n
    assert 0 < accepted < n


def test_forced_accept_and_reject():
    assert direct_trip_feasible(1.0, 2.0, 1.0, 0, 480, 0, 480, 480)
    # the delivery closes before the vehicle can possibly arrive
    assert not direct_trip_feasible(10.0, 20.0, 1.0, 0, 480, 0, 25, 480)
    assert not direct_trip_feasible(30.0, 1.0, 1.0, 0, 20, 0, 480, 480)
    # served at 470, but the destination is 15 minutes away
    assert not direct_trip_feasible(1.0, 1.0, 15.0, 0, 480, 470, 476, 480)


def offset(km_north, km_east=0.0):
    return (ATHENS[0] + km_north / 111.32, ATHENS[1] + km_east / (111.32 * np.cos(np.radians(ATHENS[0]))))


def test_single_request_needs_one_vehicle():
    inst = generate_instance(GeneratorParams(n_requests=1, n_transfers=0), 0)
    assert len(inst.vehicles) == 1


def test_far_apart_tight_requests_need_two_vehicles():
    params = GeneratorParams(n_requests=2, n_transfers=0)
    depot = (ATHENS, ATHENS)
    # pickups 1 km north and south, both closing at 10 min: one vehicle reaches one at 3 min,
    # leaves at 6 after service, needs 6 more minutes for the other
    north = Draft(offset(1.0), offset(1.2), (0.0, 10.0), (0.0, 480.0), (3.0, 3.0), 10)
    south = Draft(offset(-1.0), offset(-1.2), (0.0, 10.0), (0.0, 480.0), (3.0, 3.0), 10)
    pairs = [depot, depot]
    assert not pdp_feasible(params, pairs[:1], [north, south])
    assert fleet_size_binary_search(params, pairs, [north, south]) == (2, True)


@pytest.mark.parametrize("seed", range(6))
def test_fleet_is_minimal_for_the_heuristic(seed):
    inst = generate_instance(GeneratorParams(n_requests=25, tw_class="SML"[seed % 3]), seed)
    k = len(inst.vehicles)
    assert greedy_serves(inst, k)
    if k > 1:
        assert not greedy_serves(inst, k - 1)


def test_kmeans_single_cluster_is_the_mean():
    pts = disc_pool(np.random.default_rng(1), 300)
    for metric in ("haversine", "euclidean"):
        c = kmeans_transfers(pts, 1, np.random.default_rng(0), metric=metric)
        np.testing.assert_allclose(c[0], pts.mean(axis=0), atol=1e-12)


def test_kmeans_separates_two_clusters():
    rng = np.random.default_rng(2)
    a = rng.normal(0.0, 1.0, (40, 2))
    b = rng.normal(0.0, 1.0, (40, 2)) + [50.0, 50.0]
    c = kmeans_transfers(np.vstack([a, b]), 2, np.random.default_rng(3), metric="euclidean")
    for cluster, centre in zip((a, b), c):
        assert np.all(centre >= cluster.min(axis=0)) and np.all(centre <= cluster.max(axis=0))
    again = kmeans_transfers(np.vstack([a, b]), 2, np.random.default_rng(3), metric="euclidean")
    np.testing.assert_array_equal(c, again)


def test_kmeans_needs_enough_distinct_points():
    with pytest.raises(GenerationError):
        kmeans_transfers(np.ones((10, 2)), 2, np.random.default_rng(0))


def test_node_file_pool(tmp_path):
    pts = disc_pool(np.random.default_rng(4), 400)
    path = tmp_path / "nodes.csv"
    path.write_text("id,lat,lon\n" + "".join(f"{i},{float(x)!r},{float(y)!r}\n" for i, (x, y) in enumerate(pts)))
    inst = generate_instance(GeneratorParams(n_requests=25, node_file=str(path)), 1)
    coords = {(x, y) for x, y in pts}
    for loc in inst.locations:
        if loc.kind in (PICKUP, DELIVERY, DEPOT_ORIGIN, DEPOT_DESTINATION):
            assert (loc.x, loc.y) in coords


def test_tiny_params_fix_fleet_and_transfers():
    inst = generate_instance(tiny_params(4, "S"), 5)
    assert (len(inst.requests), len(inst.vehicles), len(inst.transfer_ids)) == (4, 2, 1)
