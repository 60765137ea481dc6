import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpt.generator import GeneratorParams, generate_instance
from pdpt.model import (
    DELIVERY,
    DEPOT_DESTINATION,
    DEPOT_ORIGIN,
    PICKUP,
    TRANSFER,
    Instance,
    InstanceFormatError,
    InstanceValidationError,
    Location,
    Request,
    Vehicle,
    build_travel_matrix,
    duplicate_transfers,
    dumps_instance,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    save_instance,
    validate_instance,
)


def haversine_km(lat1, lon1, lat2, lon2):
    # textbook formula, kept apart from the package kernels
    r = 6371.0088
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.asin(math.sqrt(a))


def minimal_doc(qty=10, capacity=75):
    return {
        "meta": {"name": "mini", "metric": "euclidean", "speed_kmh": 20, "horizon": 480, "seed": None},
        "locations": [
            {"id": 0, "kind": DEPOT_ORIGIN, "x": 0, "y": 0, "tw": [0, 480], "service": 0},
            {"id": 1, "kind": DEPOT_DESTINATION, "x": 30, "y": 0, "tw": [0, 480], "service": 0},
            {"id": 2, "kind": PICKUP, "x": 10, "y": 0, "tw": [0, 480], "service": 5},
            {"id": 3, "kind": DELIVERY, "x": 20, "y": 0, "tw": [0, 480], "service": 5},
        ],
        "requests": [{"id": 0, "pickup": 2, "delivery": 3, "qty": qty}],
        "vehicles": [{"id": 0, "origin": 0, "destination": 1, "capacity": capacity}],
        "transfers": [],
    }


def test_minimal_instance_loads(tmp_path):
    path = tmp_path / "mini.json"
    path.write_text(json.dumps(minimal_doc()), encoding="utf-8")
    inst = load_instance(path)
    assert inst.n_locations == 4
    assert inst.travel.shape == (4, 4)
    assert validate_instance(inst) == []


def test_demand_above_capacity_is_rejected():
    with pytest.raises(InstanceValidationError, match="demand exceeds capacity"):
        instance_from_dict(minimal_doc(qty=100))


def test_missing_field_is_named():
    doc = minimal_doc()
    del doc["requests"][0]["pickup"]
    with pytest.raises(InstanceFormatError, match=r"requests\[0\]\.pickup"):
        instance_from_dict(doc)


def test_invalid_json_is_a_format_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(InstanceFormatError):
        load_instance(path)


def test_all_breaches_are_listed():
    doc = minimal_doc(qty=100)
    doc["locations"][2]["tw"] = [300, 200]
    with pytest.raises(InstanceValidationError) as err:
        instance_from_dict(doc)
    messages = [str(v) for v in err.value.violations]
    assert any("location 2" in m and "time window" in m for m in messages)
    assert any("demand exceeds capacity" in m for m in messages)


def test_window_breach_cites_single_location():
    doc = minimal_doc()
    doc["locations"][3]["tw"] = [100, 50]
    inst = instance_from_dict(doc, validate=False)
    report = validate_instance(inst)
    assert len(report) == 1
    assert report[0].entity == "location" and report[0].id == 3


def test_non_square_matrix_reported():
    doc = minimal_doc()
    doc["matrices"] = {"travel": np.zeros((4, 3)).tolist(), "distance": np.zeros((4, 3)).tolist()}
    inst = instance_from_dict(doc, validate=False)
    assert any(v.message == "matrix dimension mismatch" for v in validate_instance(inst))


def test_vehicle_ids_follow_positions():
    doc = minimal_doc()
    doc["vehicles"][0]["id"] = 3
    inst = instance_from_dict(doc, validate=False)
    assert [v.entity for v in validate_instance(inst)] == ["vehicle"]


def test_same_point_has_zero_distance():
    locs = [Location(0, PICKUP, 37.98, 23.72, 0, 1), Location(1, DELIVERY, 37.98, 23.72, 0, 1)]
    for metric in ("euclidean", "haversine"):
        t, c = build_travel_matrix(locs, metric, 20.0)
        assert t[0, 1] == 0.0 and c[0, 1] == 0.0


def test_one_kilometre_takes_three_minutes_at_20kmh():
    # planar units are hectometers: 10 units = 1 km
    locs = [Location(0, PICKUP, 0.0, 0.0, 0, 1), Location(1, DELIVERY, 6.0, 8.0, 0, 1)]
    t, c = build_travel_matrix(locs, "euclidean", 20.0)
    assert c[0, 1] == pytest.approx(10.0)
    assert t[0, 1] == pytest.approx(3.0)


def test_haversine_matches_independent_formula():
    syntagma, acropolis = (37.9755, 23.7348), (37.9715, 23.7257)
    locs = [Location(0, PICKUP, *syntagma, 0, 1), Location(1, DELIVERY, *acropolis, 0, 1)]
    t, c = build_travel_matrix(locs, "haversine", 20.0)
    km = haversine_km(*syntagma, *acropolis)
    assert c[0, 1] == pytest.approx(km * 10.0, abs=1e-6)
    assert t[0, 1] == pytest.approx(km * 3.0, abs=1e-6)


def test_haversine_rejects_out_of_range():
    locs = [Location(0, PICKUP, 95.0, 0.0, 0, 1), Location(1, DELIVERY, 0.0, 0.0, 0, 1)]
    with pytest.raises(ValueError, match="out of range"):
        build_travel_matrix(locs, "haversine", 20.0)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(st.floats(37.9, 38.1), st.floats(23.6, 23.9)), min_size=2, max_size=12),
    st.sampled_from(["euclidean", "haversine"]),
    st.floats(5.0, 80.0),
)
def test_matrices_symmetric_and_unit_consistent(points, metric, speed):
    locs = [Location(i, PICKUP, x, y, 0, 1) for i, (x, y) in enumerate(points)]
    t, c = build_travel_matrix(locs, metric, speed)
    assert np.array_equal(c, c.T) and np.array_equal(t, t.T)
    assert np.all(np.diag(c) == 0)
    # hectometers and km/h: 60 min/h / 10 hm/km
    np.testing.assert_allclose(t * speed, c * 6.0, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_generated_instances_round_trip(tmp_path, seed):
    inst = generate_instance(GeneratorParams(n_requests=25, tw_class="SML"[seed % 3]), seed)
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    again = load_instance(path)
    assert again == inst
    save_instance(again, tmp_path / "again.json")
    assert path.read_bytes() == (tmp_path / "again.json").read_bytes()


def test_duplicate_transfer_copies_keep_order(tmp_path):
    inst = generate_instance(GeneratorParams(n_requests=25, tw_class="L"), 3)
    dup = duplicate_transfers(inst, 2)
    assert len(dup.transfer_ids) == 2 * len(inst.transfer_ids)
    assert list(dup.transfer_ids[: len(inst.transfer_ids)]) == list(inst.transfer_ids)
    for extra, orig in zip(dup.transfer_ids[len(inst.transfer_ids):], inst.transfer_ids):
        assert dup.locations[extra].kind == TRANSFER
        assert (dup.locations[extra].x, dup.locations[extra].y) == (inst.locations[orig].x, inst.locations[orig].y)
    save_instance(dup, tmp_path / "dup.json")
    assert load_instance(tmp_path / "dup.json").transfer_ids == dup.transfer_ids


def test_matrices_stored_in_file_are_used():
    inst = instance_from_dict(minimal_doc())
    doc = instance_to_dict(inst, include_matrices=True)
    doc["matrices"]["travel"][0][2] = 99.0
    doc["matrices"]["distance"][0][2] = 330.0
    custom = instance_from_dict(doc)
    assert custom.travel[0, 2] == 99.0
    assert "matrices" in json.loads(dumps_instance(custom, include_matrices=True))


def test_instance_is_immutable():
    inst = instance_from_dict(minimal_doc())
    with pytest.raises(ValueError):
        inst.travel[0, 1] = 5.0
    assert isinstance(inst, Instance)
    assert inst.vehicles[0] == Vehicle(0, 0, 1, 75.0)
    assert inst.requests[0] == Request(0, 2, 3, 10.0)
