"""Instance types, JSON I/O and travel matrices.

Distances are in hectometers and times in minutes. A vehicle moving at
``speed`` km/h covers ``c`` hm in ``6 * c / speed`` minutes. For the
``euclidean`` metric coordinates are read as hectometers; for
``haversine`` ``x`` is latitude and ``y`` longitude in degrees.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels

DEPOT_ORIGIN = "depot-origin"
DEPOT_DESTINATION = "depot-destination"
PICKUP = "pickup"
DELIVERY = "delivery"
TRANSFER = "transfer"
KINDS = (DEPOT_ORIGIN, DEPOT_DESTINATION, PICKUP, DELIVERY, TRANSFER)
METRICS = ("euclidean", "haversine")

# minutes per (hectometer / (km/h))
MIN_PER_HM_KMH = 6.0


class InstanceFormatError(ValueError):
    """Raised when an instance file does not match the schema."""


class InstanceValidationError(ValueError):
    """Raised when a parsed instance breaks one or more invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} instance violation(s):\n{lines}")


@dataclass(frozen=True)
class Location:
    id: int
    kind: str
    x: float
    y: float
    tw_open: float
    tw_close: float
    service: float = 0.0


@dataclass(frozen=True)
class Request:
    id: int
    pickup: int
    delivery: int
    qty: float


@dataclass(frozen=True)
class Vehicle:
    id: int
    origin: int
    destination: int
    capacity: float


@dataclass(frozen=True)
class Violation:
    entity: str
    id: int | None
    message: str

    def __str__(self):
        where = self.entity if self.id is None else f"{self.entity} {self.id}"
        return f"{where}: {self.message}"


def build_travel_matrix(locations, metric: str, speed: float):
    """Return ``(t, c)``: travel minutes and distances in hectometers."""
    if speed <= 0:
        raise ValueError("speed must be positive")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    xs = np.array([loc.x for loc in locations], dtype=np.float64)
    ys = np.array([loc.y for loc in locations], dtype=np.float64)
    if metric == "haversine":
        bad = [loc.id for loc in locations if abs(loc.x) > 90.0 or abs(loc.y) > 180.0]
        if bad:
            raise ValueError(f"coordinates out of range for haversine at locations {bad}")
        c = _kernels.haversine_matrix(xs, ys) * 10.0
    else:
        c = np.hypot(xs[:, None] - xs[None, :], ys[:, None] - ys[None, :])
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 0.0)
    t = c * (MIN_PER_HM_KMH / speed)
    return t, c


@dataclass(frozen=True, eq=False)
class Instance:
    name: str
    locations: tuple[Location, ...]
    requests: tuple[Request, ...]
    vehicles: tuple[Vehicle, ...]
    transfer_ids: tuple[int, ...]
    metric: str = "euclidean"
    speed: float = 20.0
    horizon: float = 480.0
    seed: int | None = None
    travel: np.ndarray = field(default=None, repr=False)
    distance: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("locations", "requests", "vehicles", "transfer_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.travel is None or self.distance is None:
            t, c = build_travel_matrix(self.locations, self.metric, self.speed)
        else:
            t = np.array(self.travel, dtype=np.float64)
            c = np.array(self.distance, dtype=np.float64)
        t.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "travel", t)
        object.__setattr__(self, "distance", c)

    @property
    def n_locations(self) -> int:
        return len(self.locations)

    @property
    def capacity(self) -> float:
        return self.vehicles[0].capacity if self.vehicles else 0.0

    @cached_property
    def tw_open(self) -> np.ndarray:
        return np.array([loc.tw_open for loc in self.locations], dtype=np.float64)

    @cached_property
    def tw_close(self) -> np.ndarray:
        return np.array([loc.tw_close for loc in self.locations], dtype=np.float64)

    @cached_property
    def service(self) -> np.ndarray:
        return np.array([loc.service for loc in self.locations], dtype=np.float64)

    @cached_property
    def tt(self) -> np.ndarray:
        """Service at ``i`` plus travel ``i -> j``: the gap between two service starts."""
        out = self.travel + self.service[:, None]
        np.fill_diagonal(out, 0.0)
        out.setflags(write=False)
        return out

    @cached_property
    def transfer_set(self) -> frozenset:
        return frozenset(self.transfer_ids)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        same = (
            self.name == other.name
            and self.locations == other.locations
            and self.requests == other.requests
            and self.vehicles == other.vehicles
            and self.transfer_ids == other.transfer_ids
            and self.metric == other.metric
            and self.speed == other.speed
            and self.horizon == other.horizon
            and self.seed == other.seed
        )
        if not same or self.travel.shape != other.travel.shape:
            return False
        return bool(
            np.allclose(self.travel, other.travel, rtol=1e-12, atol=1e-12)
            and np.allclose(self.distance, other.distance, rtol=1e-12, atol=1e-12)
        )

    __hash__ = None

    def replace_matrices(self, travel, distance) -> "Instance":
        """Copy with explicit matrices (used for literature-style data)."""
        return Instance(
            self.name, self.locations, self.requests, self.vehicles, self.transfer_ids,
            self.metric, self.speed, self.horizon, self.seed, travel, distance,
        )


def duplicate_transfers(instance: Instance, copies: int) -> Instance:
    """Add ``copies - 1`` extra copies of every transfer point.

    Copies share coordinates and windows with the original and are appended
    after the existing locations, so existing ids keep their meaning.
    """
    if copies < 1:
        raise ValueError("copies must be >= 1")
    locations = list(instance.locations)
    transfer_ids = list(instance.transfer_ids)
    for _ in range(copies - 1):
        for tid in instance.transfer_ids:
            src = instance.locations[tid]
            new = Location(len(locations), TRANSFER, src.x, src.y, src.tw_open, src.tw_close, src.service)
            locations.append(new)
            transfer_ids.append(new.id)
    return Instance(
        instance.name, locations, instance.requests, instance.vehicles, transfer_ids,
        instance.metric, instance.speed, instance.horizon, instance.seed,
    )


def validate_instance(instance: Instance) -> list[Violation]:
    """List every broken invariant. An empty list means the instance is valid."""
    out: list[Violation] = []
    n = instance.n_locations
    kinds = {}
    for pos, loc in enumerate(instance.locations):
        if loc.id != pos:
            out.append(Violation("location", loc.id, f"id does not match position {pos}"))
        if loc.kind not in KINDS:
            out.append(Violation("location", loc.id, f"unknown kind {loc.kind!r}"))
        if not (0.0 <= loc.tw_open <= loc.tw_close):
            out.append(Violation("location", loc.id, f"bad time window [{loc.tw_open}, {loc.tw_close}]"))
        if loc.service < 0:
            out.append(Violation("location", loc.id, "negative service time"))
        kinds[loc.id] = loc.kind

    def kind_of(j):
        return kinds.get(j) if 0 <= j < n else None

    capacities = {veh.capacity for veh in instance.vehicles}
    if len(capacities) > 1:
        out.append(Violation("fleet", None, "capacities differ across vehicles (fleet must be homogeneous)"))
    if not instance.vehicles:
        out.append(Violation("fleet", None, "no vehicles"))
    cap = instance.capacity
    for pos, veh in enumerate(instance.vehicles):
        if veh.id != pos:
            out.append(Violation("vehicle", veh.id, f"id does not match position {pos}"))
        if kind_of(veh.origin) != DEPOT_ORIGIN:
            out.append(Violation("vehicle", veh.id, f"origin {veh.origin} is not a depot-origin"))
        if kind_of(veh.destination) != DEPOT_DESTINATION:
            out.append(Violation("vehicle", veh.id, f"destination {veh.destination} is not a depot-destination"))
        if veh.capacity <= 0:
            out.append(Violation("vehicle", veh.id, "capacity must be positive"))

    for pos, req in enumerate(instance.requests):
        if req.id != pos:
            out.append(Violation("request", req.id, f"id does not match position {pos}"))
        if req.pickup == req.delivery:
            out.append(Violation("request", req.id, "pickup equals delivery"))
        if kind_of(req.pickup) != PICKUP:
            out.append(Violation("request", req.id, f"pickup {req.pickup} is not a pickup location"))
        if kind_of(req.delivery) != DELIVERY:
            out.append(Violation("request", req.id, f"delivery {req.delivery} is not a delivery location"))
        if req.qty <= 0:
            out.append(Violation("request", req.id, "demand must be positive"))
        elif req.qty > cap:
            out.append(Violation("request", req.id, "demand exceeds capacity"))

    seen_points: dict[int, int] = {}
    for req in instance.requests:
        for j in (req.pickup, req.delivery):
            if j in seen_points:
                out.append(Violation("location", j, f"shared by requests {seen_points[j]} and {req.id}"))
            seen_points[j] = req.id
    for tid in instance.transfer_ids:
        if kind_of(tid) != TRANSFER:
            out.append(Violation("transfer", tid, "listed transfer is not a transfer location"))
    if len(set(instance.transfer_ids)) != len(instance.transfer_ids):
        out.append(Violation("transfer", None, "transfer ids repeated (use separate copies)"))

    if instance.metric not in METRICS:
        out.append(Violation("meta", None, f"unknown metric {instance.metric!r}"))
    if instance.speed <= 0:
        out.append(Violation("meta", None, "speed must be positive"))

    t, c = instance.travel, instance.distance
    if t.shape != (n, n) or c.shape != (n, n):
        out.append(Violation("matrix", None, "matrix dimension mismatch"))
        return out
    if (t < 0).any() or (c < 0).any():
        out.append(Violation("matrix", None, "negative entries"))
    if np.any(np.diag(t) != 0) or np.any(np.diag(c) != 0):
        out.append(Violation("matrix", None, "non-zero diagonal"))
    if instance.speed > 0 and not np.allclose(t * instance.speed / MIN_PER_HM_KMH, c, rtol=1e-9, atol=1e-9):
        out.append(Violation("matrix", None, "travel times inconsistent with distances and speed"))
    return out


# ---------------------------------------------------------------------------
# JSON


def _num(v):
    f = float(v)
    return int(f) if f.is_integer() and abs(f) < 2**53 else f


def instance_to_dict(instance: Instance, include_matrices: bool = False) -> dict:
    doc = {
        "meta": {
            "name": instance.name,
            "metric": instance.metric,
            "speed_kmh": _num(instance.speed),
            "horizon": _num(instance.horizon),
            "seed": instance.seed,
        },
        "locations": [
            {
                "id": loc.id,
                "kind": loc.kind,
                "x": loc.x,
                "y": loc.y,
                "tw": [_num(loc.tw_open), _num(loc.tw_close)],
                "service": _num(loc.service),
            }
            for loc in instance.locations
        ],
        "requests": [
            {"id": r.id, "pickup": r.pickup, "delivery": r.delivery, "qty": _num(r.qty)}
            for r in instance.requests
        ],
        "vehicles": [
            {"id": v.id, "origin": v.origin, "destination": v.destination, "capacity": _num(v.capacity)}
            for v in instance.vehicles
        ],
        "transfers": list(instance.transfer_ids),
    }
    if include_matrices:
        doc["matrices"] = {
            "travel": instance.travel.tolist(),
            "distance": instance.distance.tolist(),
        }
    return doc


def _field(obj, key, where):
    try:
        return obj[key]
    except (KeyError, TypeError, IndexError):
        raise InstanceFormatError(f"missing field {where}.{key}") from None


def instance_from_dict(doc: dict, validate: bool = True) -> Instance:
    if not isinstance(doc, dict):
        raise InstanceFormatError("top-level document must be an object")
    meta = _field(doc, "meta", "$")
    try:
        locations = []
        for i, raw in enumerate(_field(doc, "locations", "$")):
            where = f"locations[{i}]"
            tw = _field(raw, "tw", where)
            if len(tw) != 2:
                raise InstanceFormatError(f"field {where}.tw must have two entries")
            locations.append(Location(
                int(_field(raw, "id", where)), str(_field(raw, "kind", where)),
                float(_field(raw, "x", where)), float(_field(raw, "y", where)),
                float(tw[0]), float(tw[1]), float(raw.get("service", 0.0)),
            ))
        requests = [
            Request(
                int(_field(raw, "id", f"requests[{i}]")),
                int(_field(raw, "pickup", f"requests[{i}]")),
                int(_field(raw, "delivery", f"requests[{i}]")),
                float(_field(raw, "qty", f"requests[{i}]")),
            )
            for i, raw in enumerate(_field(doc, "requests", "$"))
        ]
        vehicles = [
            Vehicle(
                int(_field(raw, "id", f"vehicles[{i}]")),
                int(_field(raw, "origin", f"vehicles[{i}]")),
                int(_field(raw, "destination", f"vehicles[{i}]")),
                float(_field(raw, "capacity", f"vehicles[{i}]")),
            )
            for i, raw in enumerate(_field(doc, "vehicles", "$"))
        ]
        transfers = [int(j) for j in doc.get("transfers", [])]
        metric = str(_field(meta, "metric", "meta"))
        speed = float(_field(meta, "speed_kmh", "meta"))
        horizon = float(_field(meta, "horizon", "meta"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InstanceFormatError):
            raise
        raise InstanceFormatError(f"malformed value: {exc}") from None
    if metric not in METRICS:
        raise InstanceFormatError(f"field meta.metric must be one of {METRICS}")

    travel = distance = None
    if "matrices" in doc:
        mats = doc["matrices"]
        travel = np.asarray(_field(mats, "travel", "matrices"), dtype=np.float64)
        distance = np.asarray(_field(mats, "distance", "matrices"), dtype=np.float64)
    elif speed <= 0:
        raise InstanceValidationError([Violation("meta", None, "speed must be positive")])

    seed = meta.get("seed")
    inst = Instance(
        str(meta.get("name", "")), locations, requests, vehicles, transfers,
        metric, speed, horizon, None if seed is None else int(seed), travel, distance,
    )
    if validate:
        report = validate_instance(inst)
        if report:
            raise InstanceValidationError(report)
    return inst


def dumps_instance(instance: Instance, include_matrices: bool = False) -> str:
    return json.dumps(instance_to_dict(instance, include_matrices), indent=1) + "\n"


def save_instance(instance: Instance, path, include_matrices: bool = False) -> None:
    Path(path).write_text(dumps_instance(instance, include_matrices), encoding="utf-8")


def load_instance(path) -> Instance:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"invalid JSON: {exc}") from None
    return instance_from_dict(doc)
