"""Destroy and repair operators, request orderings, acceptance and operator weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .insertion import FeasibilityCache, apply_insertion, best_insertions
from .model import Instance
from .routing import Solution, remove_requests

SHAW_THETA = (0.33, 0.99, 0.66)


# ---------------------------------------------------------------------------
# request features


def feature_matrix(instance: Instance):
    """Rows ``[q, x(p), y(p), x(d), y(d), l(p), l(d), st(p), st(d)]`` and their covariance.

    The covariance gets a small ridge when it is singular and falls back to
    the identity with fewer than two requests.
    """
    locs = instance.locations
    X = np.array(
        [
            [r.qty, locs[r.pickup].x, locs[r.pickup].y, locs[r.delivery].x, locs[r.delivery].y,
             locs[r.pickup].tw_open, locs[r.delivery].tw_open, locs[r.pickup].service, locs[r.delivery].service]
            for r in instance.requests
        ],
        dtype=np.float64,
    ).reshape(-1, 9)
    return X, regularized_covariance(X)


def regularized_covariance(X: np.ndarray, ridge: bool = True) -> np.ndarray:
    if X.shape[0] < 2:
        return np.eye(X.shape[1])
    cov = np.cov(X, rowvar=False)
    if not ridge:
        return cov
    if np.linalg.matrix_rank(cov) < cov.shape[0]:
        cov = cov + (1e-6 * np.trace(cov) / cov.shape[0] + 1e-12) * np.eye(cov.shape[0])
    return cov


def precision_factor(cov: np.ndarray) -> np.ndarray:
    """``W`` with ``W @ W.T == inv(cov)``, so distances are norms of ``x @ W``."""
    prec = np.linalg.inv(cov)
    prec = 0.5 * (prec + prec.T)
    return np.linalg.cholesky(prec)


def mahalanobis_matrix(X: np.ndarray, cov: np.ndarray) -> np.ndarray:
    return _kernels.pairwise_mahalanobis(X, precision_factor(cov))


def mahalanobis_dissimilarity(X: np.ndarray, cov: np.ndarray, r: int, r2: int) -> float:
    diff = X[r] - X[r2]
    return float(np.sqrt(max(diff @ np.linalg.solve(cov, diff), 0.0)))


def shaw_dissimilarity(instance: Instance, r: int, r2: int, theta=SHAW_THETA) -> float:
    a, b = instance.requests[r], instance.requests[r2]
    t, lo = instance.travel, instance.tw_open
    return (
        theta[0] * abs(a.qty - b.qty)
        + theta[1] * (t[a.pickup, b.pickup] + t[a.delivery, b.delivery])
        + theta[2] * (abs(lo[a.pickup] - lo[b.pickup]) + abs(lo[a.delivery] - lo[b.delivery]))
    )


def shaw_matrix(instance: Instance, theta=SHAW_THETA) -> np.ndarray:
    reqs = instance.requests
    p = np.array([r.pickup for r in reqs], dtype=np.int64)
    d = np.array([r.delivery for r in reqs], dtype=np.int64)
    q = np.array([r.qty for r in reqs])
    t, lo = instance.travel, instance.tw_open
    return (
        theta[0] * np.abs(q[:, None] - q[None, :])
        + theta[1] * (t[np.ix_(p, p)] + t[np.ix_(d, d)])
        + theta[2] * (np.abs(lo[p][:, None] - lo[p][None, :]) + np.abs(lo[d][:, None] - lo[d][None, :]))
    )


# ---------------------------------------------------------------------------
# orderings


def _minmax(v: np.ndarray) -> np.ndarray:
    span = v.max() - v.min() if v.size else 0.0
    if span <= 0:
        return np.zeros_like(v)
    return (v - v.min()) / span


def insertion_difficulty(instance: Instance) -> np.ndarray:
    """Scaled demand, p-d travel time and service minus scaled window widths."""
    reqs = instance.requests
    if not reqs:
        return np.zeros(0)
    p = np.array([r.pickup for r in reqs])
    d = np.array([r.delivery for r in reqs])
    width = instance.tw_close - instance.tw_open
    st = instance.service
    return (
        _minmax(np.array([r.qty for r in reqs], dtype=np.float64))
        + _minmax(instance.travel[p, d])
        + _minmax(st[p])
        + _minmax(st[d])
        - _minmax(width[p])
        - _minmax(width[d])
    )


def insertion_ease(instance: Instance, theta=SHAW_THETA) -> np.ndarray:
    reqs = instance.requests
    p = np.array([r.pickup for r in reqs], dtype=np.int64)
    d = np.array([r.delivery for r in reqs], dtype=np.int64)
    width = instance.tw_close - instance.tw_open
    q = np.array([r.qty for r in reqs], dtype=np.float64)
    return theta[0] * q + theta[1] * instance.travel[p, d] - theta[2] * (width[p] + width[d])


def order_by(scores: np.ndarray, requests) -> list[int]:
    """Requests sorted by decreasing score, ties by id."""
    return sorted(requests, key=lambda r: (-scores[r], r))


# ---------------------------------------------------------------------------
# destroy


def random_removal(instance: Instance, solution: Solution, n: int, rng):
    served = sorted(solution.served())
    removed = [int(r) for r in rng.choice(served, size=n, replace=False)] if n else []
    return removed, remove_requests(instance, solution, removed)


def removal_gains(instance: Instance, solution: Solution) -> dict:
    base = solution.objective(instance)
    return {r: base - remove_requests(instance, solution, [r]).cost for r in sorted(solution.served())}


def worst_removal(instance: Instance, solution: Solution, n: int, w_s: float, rng):
    """Repeatedly drop the request whose removal saves the most, with noise."""
    removed = []
    for _ in range(n):
        gains = removal_gains(instance, solution)
        keys = list(gains)
        noise = rng.uniform(1.0 - w_s, 1.0, size=len(keys))
        scores = np.array([gains[r] for r in keys]) * noise
        r = keys[int(np.argmax(scores))]
        removed.append(r)
        solution = remove_requests(instance, solution, [r])
    return removed, solution


def related_removal(instance: Instance, solution: Solution, n: int, dissimilarity: np.ndarray, rng):
    """Seed at random, then grow with the request closest to a random removed one."""
    served = sorted(solution.served())
    if n <= 0 or not served:
        return [], solution
    removed = [served[int(rng.integers(len(served)))]]
    left = [r for r in served if r != removed[0]]
    while len(removed) < n and left:
        anchor = removed[int(rng.integers(len(removed)))]
        row = dissimilarity[anchor, left]
        r = left[int(np.argmin(row))]
        removed.append(r)
        left.remove(r)
    return removed, remove_requests(instance, solution, removed)


# ---------------------------------------------------------------------------
# repair


def repair(instance: Instance, partial: Solution, order, beta: float, rng, transfers: bool = True):
    """Blinking cheapest insertion in the given order; ``None`` on failure.

    Skipping each feasible candidate with probability ``beta`` and taking
    the cheapest survivor is the same as drawing the number of skipped
    leaders from a geometric law, so only that many leaders are searched.
    If every candidate would be skipped the cheapest one is used.
    """
    sol = partial
    for r in order:
        g = int(rng.geometric(1.0 - beta)) - 1 if beta > 0 else 0
        cands = best_insertions(FeasibilityCache(instance, sol), r, g + 1, transfers)
        if not cands:
            return None
        pick = cands[g] if g < len(cands) else cands[0]
        sol = apply_insertion(instance, sol, pick, check=False)
    return sol


# ---------------------------------------------------------------------------
# acceptance


def lahc_accept(ring: list, current: float, candidate: float, v: int):
    """Late-acceptance test; returns ``(accepted, new_current)`` and updates ``ring`` in place."""
    slot = v % len(ring)
    accepted = candidate <= current or candidate <= ring[slot]
    if accepted:
        current = candidate
    ring[slot] = current
    return accepted, current


@dataclass
class OperatorBank:
    """Roulette-wheel operator selection with segment-wise weight updates."""

    names: tuple
    alpha: float = 0.3
    floor: float = 1e-3
    weights: np.ndarray = field(default=None)
    scores: np.ndarray = field(default=None)
    uses: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.names)
        if self.weights is None:
            self.weights = np.ones(n)
        self.scores = np.zeros(n)
        self.uses = np.zeros(n, dtype=np.int64)

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def select(self, rng) -> int:
        i = int(rng.choice(len(self.names), p=self.probabilities))
        self.uses[i] += 1
        return i

    def reward(self, i: int, amount: float) -> None:
        self.scores[i] += amount

    def end_segment(self) -> None:
        used = self.uses > 0
        avg = np.where(used, self.scores / np.maximum(self.uses, 1), 0.0)
        self.weights = np.where(used, (1.0 - self.alpha) * self.weights + self.alpha * avg, self.weights)
        self.weights = np.maximum(self.weights, self.floor)
        self.scores[:] = 0.0
        self.uses[:] = 0
