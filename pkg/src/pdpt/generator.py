"""Benchmark instance generator.

Requests are sampled feasibility-first: a request is kept only if some
drafted vehicle could serve it alone on the trip origin, pickup, delivery,
destination. The fleet is the smallest prefix of the drafted vehicles that
cheapest insertion without transfers can serve, and transfer points are
k-means centroids of the request locations.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .insertion import insert_cheapest
from .model import (
    DELIVERY,
    DEPOT_DESTINATION,
    DEPOT_ORIGIN,
    PICKUP,
    TRANSFER,
    Instance,
    Location,
    Request,
    Vehicle,
    validate_instance,
)
from .operators import insertion_difficulty, order_by
from .routing import Solution

ATHENS = (37.9838, 23.7275)
TW_WIDTHS = {"S": (60, 90), "M": (90, 120), "L": (120, 150)}
TRANSFERS_BY_SCALE = {25: 3, 50: 4, 75: 5, 100: 6}


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GeneratorParams:
    n_requests: int = 25
    tw_class: str = "L"
    demand: tuple = (5, 25)
    capacity: float = 75.0
    horizon: float = 480.0
    speed: float = 20.0
    service: tuple = (3, 10)
    tw_step: int = 30
    tw_last_start: int = 450
    n_transfers: int | None = None
    n_vehicles: int | None = None
    node_file: str | None = None
    radius_km: float = 5.0
    center: tuple = ATHENS
    pool_size: int = 2000
    max_samples: int = 200_000

    def __post_init__(self):
        if self.tw_class not in TW_WIDTHS:
            raise ValueError(f"tw_class must be one of {sorted(TW_WIDTHS)}")
        if self.n_requests < 1:
            raise ValueError("n_requests must be positive")
        if self.demand[0] > self.demand[1] or self.service[0] > self.service[1]:
            raise ValueError("empty demand or service range")
        if self.demand[1] > self.capacity:
            raise ValueError("demand range exceeds capacity")

    @property
    def transfer_count(self) -> int:
        if self.n_transfers is not None:
            return self.n_transfers
        return TRANSFERS_BY_SCALE.get(self.n_requests, 2 + math.ceil(self.n_requests / 25))


# ---------------------------------------------------------------------------
# coordinates


def disc_pool(rng, n: int, center=ATHENS, radius_km: float = 5.0) -> np.ndarray:
    """``n`` (lat, lon) points uniform on a disc around ``center``."""
    r = radius_km * np.sqrt(rng.uniform(0.0, 1.0, n))
    ang = rng.uniform(0.0, 2.0 * np.pi, n)
    dlat = r * np.cos(ang) / 111.32
    dlon = r * np.sin(ang) / (111.32 * np.cos(np.radians(center[0])))
    return np.column_stack([center[0] + dlat, center[1] + dlon])


def read_node_file(path, center=ATHENS, radius_km: float | None = None) -> np.ndarray:
    """Read a CSV with ``id,lat,lon`` columns, optionally keeping a disc."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(float(row["lat"]), float(row["lon"])) for row in csv.DictReader(fh)]
    pts = np.array(rows, dtype=np.float64).reshape(-1, 2)
    if radius_km is not None and len(pts):
        d = _kernels.haversine_matrix(np.append(pts[:, 0], center[0]), np.append(pts[:, 1], center[1]))[-1, :-1]
        pts = pts[d <= radius_km]
    return pts


def kmeans_transfers(coords: np.ndarray, k: int, rng, metric: str = "haversine", iters: int = 100) -> np.ndarray:
    """Lloyd's k-means with D^2 seeding; centroids sorted by x then y."""
    pts = np.asarray(coords, dtype=np.float64)
    if len(np.unique(pts, axis=0)) < k:
        raise GenerationError(f"need at least {k} distinct points for k-means")

    def dist(a, b):
        if metric == "haversine":
            phi1, phi2 = np.radians(a[:, None, 0]), np.radians(b[None, :, 0])
            h = np.sin((phi2 - phi1) / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(np.radians(b[None, :, 1] - a[:, None, 1]) / 2) ** 2
            return 2.0 * _kernels.EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
        return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))

    centers = [pts[int(rng.integers(len(pts)))]]
    while len(centers) < k:
        d2 = dist(pts, np.array(centers)).min(axis=1) ** 2
        total = d2.sum()
        idx = int(rng.choice(len(pts), p=d2 / total)) if total > 0 else int(rng.integers(len(pts)))
        centers.append(pts[idx])
    centers = np.array(centers)
    for _ in range(iters):
        label = dist(pts, centers).argmin(axis=1)
        new = np.array([pts[label == j].mean(axis=0) if np.any(label == j) else centers[j] for j in range(k)])
        shift = np.abs(new - centers).max()
        centers = new
        if shift < 1e-9:
            break
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    return centers[order]


# ---------------------------------------------------------------------------
# requests


def direct_trip_feasible(tt_op, tt_pd, tt_de, l_p, u_p, l_d, u_d, horizon, start=0.0) -> bool:
    """Can one vehicle run origin, pickup, delivery, destination in time?

    ``tt_*`` already include service at the leg's start location.
    """
    a_p = max(l_p, start + tt_op)
    if a_p > u_p + 1e-9:
        return False
    a_d = max(l_d, a_p + tt_pd)
    if a_d > u_d + 1e-9:
        return False
    return a_d + tt_de <= horizon + 1e-9


@dataclass(frozen=True)
class Draft:
    """A sampled request before it receives an id."""

    pickup: tuple
    delivery: tuple
    tw_pickup: tuple
    tw_delivery: tuple
    service: tuple
    qty: int


def _minutes(a, b, speed):
    d_km = _kernels.haversine_matrix(np.array([a[0], b[0]]), np.array([a[1], b[1]]))[0, 1]
    return d_km * 10.0 * 6.0 / speed


def sample_request(pool: np.ndarray, pairs, params: GeneratorParams, width: int, rng):
    """Propose one request; return a :class:`Draft` or ``None`` when rejected."""
    i, j = rng.choice(len(pool), size=2, replace=False)
    p, d = tuple(pool[i]), tuple(pool[j])
    starts = np.arange(0, params.tw_last_start + 1, params.tw_step)
    lp, ld = (float(x) for x in rng.choice(starts, size=2))
    tw_p = (lp, min(lp + width, params.horizon))
    tw_d = (ld, min(ld + width, params.horizon))
    st_p, st_d = (float(x) for x in rng.integers(params.service[0], params.service[1] + 1, size=2))
    ok = False
    for o, e in pairs:
        if direct_trip_feasible(
            _minutes(o, p, params.speed), _minutes(p, d, params.speed) + st_p, _minutes(d, e, params.speed) + st_d,
            tw_p[0], tw_p[1], tw_d[0], tw_d[1], params.horizon,
        ):
            ok = True
            break
    if not ok:
        return None
    qty = int(rng.integers(params.demand[0], params.demand[1] + 1))
    return Draft(p, d, tw_p, tw_d, (st_p, st_d), qty)


# ---------------------------------------------------------------------------
# assembly


def assemble(params: GeneratorParams, pairs, drafts, transfers, name: str, seed) -> Instance:
    locs = []
    H = params.horizon

    def add(kind, pt, tw, st):
        locs.append(Location(len(locs), kind, float(pt[0]), float(pt[1]), float(tw[0]), float(tw[1]), float(st)))
        return len(locs) - 1

    origins = [add(DEPOT_ORIGIN, o, (0.0, H), 0.0) for o, _ in pairs]
    dests = [add(DEPOT_DESTINATION, e, (0.0, H), 0.0) for _, e in pairs]
    reqs = []
    for r, dr in enumerate(drafts):
        p = add(PICKUP, dr.pickup, dr.tw_pickup, dr.service[0])
        d = add(DELIVERY, dr.delivery, dr.tw_delivery, dr.service[1])
        reqs.append(Request(r, p, d, float(dr.qty)))
    tids = [add(TRANSFER, t, (0.0, H), 0.0) for t in transfers]
    vehicles = [Vehicle(k, origins[k], dests[k], params.capacity) for k in range(len(pairs))]
    return Instance(name, locs, reqs, vehicles, tids, "haversine", params.speed, H, seed)


def pdp_feasible(params: GeneratorParams, pairs, drafts) -> bool:
    """Cheapest insertion without transfers serves every request."""
    inst = assemble(params, pairs, drafts, [], "probe", None)
    order = order_by(insertion_difficulty(inst), range(len(drafts)))
    return insert_cheapest(inst, Solution.empty(inst), order, transfers=False) is not None


def fleet_size_binary_search(params: GeneratorParams, pairs, drafts):
    """Smallest k such that the first k drafted vehicles suffice.

    Returns ``(k, monotone)``. A linear scan replaces the binary search
    when feasibility turns out not to be monotone in k.
    """
    lo, hi = 1, len(pairs)
    if not pdp_feasible(params, pairs[:hi], drafts):
        raise GenerationError("even the full drafted fleet cannot serve all requests")
    while lo < hi:
        mid = (lo + hi) // 2
        if pdp_feasible(params, pairs[:mid], drafts):
            hi = mid
        else:
            lo = mid + 1
    k = lo
    if k > 1 and pdp_feasible(params, pairs[: k - 1], drafts):
        k = next(j for j in range(1, len(pairs) + 1) if pdp_feasible(params, pairs[:j], drafts))
        return k, False
    return k, True


def _draw_pairs(pool, n, rng):
    idx = rng.choice(len(pool), size=(n, 2), replace=True)
    same = idx[:, 0] == idx[:, 1]
    while same.any():
        idx[same, 1] = rng.integers(len(pool), size=int(same.sum()))
        same = idx[:, 0] == idx[:, 1]
    return [(tuple(pool[a]), tuple(pool[b])) for a, b in idx]


def generate_instance(params: GeneratorParams, seed: int, attempts: int = 20) -> Instance:
    """Generate a valid instance; the same ``(params, seed)`` gives the same instance."""
    rng = np.random.default_rng(seed)
    if params.node_file:
        pool = read_node_file(params.node_file, params.center, params.radius_km)
    else:
        pool = disc_pool(rng, params.pool_size, params.center, params.radius_km)
    if len(pool) < 4:
        raise GenerationError("coordinate pool too small")
    width = int(rng.choice(TW_WIDTHS[params.tw_class]))
    name = f"pdpt-{params.n_requests}-{params.tw_class}{width}-{seed}"
    for _ in range(attempts):
        n_pairs = params.n_vehicles or params.n_requests
        pairs = _draw_pairs(pool, n_pairs, rng)
        drafts, samples = [], 0
        while len(drafts) < params.n_requests:
            samples += 1
            if samples > params.max_samples:
                raise GenerationError("request sampling exceeded its budget")
            dr = sample_request(pool, pairs, params, width, rng)
            if dr is not None:
                drafts.append(dr)
        if params.n_vehicles is None:
            try:
                k, _ = fleet_size_binary_search(params, pairs, drafts)
            except GenerationError:
                continue
            pairs = pairs[:k]
        elif not pdp_feasible(params, pairs, drafts):
            continue
        pts = np.array([x for dr in drafts for x in (dr.pickup, dr.delivery)])
        centers = kmeans_transfers(pts, params.transfer_count, rng) if params.transfer_count else np.zeros((0, 2))
        inst = assemble(params, pairs, drafts, [tuple(c) for c in centers], name, seed)
        report = validate_instance(inst)
        if report:  # pragma: no cover - guarded by construction
            raise GenerationError(f"generated instance is invalid: {report}")
        return inst
    raise GenerationError(f"no feasible instance after {attempts} attempts")


def generate_suite(params: GeneratorParams, seeds) -> list[Instance]:
    return [generate_instance(params, int(s)) for s in seeds]


def tiny_params(n_requests: int, tw_class: str, **kw) -> GeneratorParams:
    """Parameters for oracle-sized instances: two vehicles, one transfer point."""
    base = dict(n_requests=n_requests, tw_class=tw_class, n_vehicles=2, n_transfers=1, radius_km=3.0)
    base.update(kw)
    return replace(GeneratorParams(), **base)


def save_suite(instances, folder) -> list[Path]:
    from .model import save_instance

    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    out = []
    for inst in instances:
        path = folder / f"{inst.name}.json"
        save_instance(inst, path)
        out.append(path)
    return out
