"""Hot numeric kernels.

Every kernel exists twice: a numba-compiled version and a numpy (or plain
Python) fallback. Set ``PDPT_DISABLE_NUMBA=1`` to force the fallback path;
it is also used automatically when numba cannot be imported.
"""
from __future__ import annotations

import math
import os

import numpy as np

NEG = -np.inf
EPS = 1e-9
EARTH_RADIUS_KM = 6371.0088


def _numba_wanted() -> bool:
    flag = os.environ.get("PDPT_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("1", "true", "yes", "on")


try:  # pragma: no cover - import guard
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_wanted()


def jit(func):
    """``numba.njit(cache=True)`` when enabled, identity otherwise.

    The uncompiled function stays reachable as ``.py_func`` in both modes so
    benchmarks can compare the two paths.
    """
    if USE_NUMBA:
        compiled = numba.njit(cache=True)(func)
        return compiled
    func.py_func = func
    return func


# ---------------------------------------------------------------------------
# great-circle distances


def haversine_matrix_numpy(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    phi = np.radians(lat)
    lam = np.radians(lon)
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi[:, None]) * np.cos(phi[None, :]) * np.sin(dlam / 2.0) ** 2
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


def _haversine_matrix_loop(lat, lon):
    n = lat.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        p1 = math.radians(lat[i])
        for j in range(i + 1, n):
            p2 = math.radians(lat[j])
            dp = p2 - p1
            dl = math.radians(lon[j] - lon[i])
            h = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
            if h > 1.0:
                h = 1.0
            d = 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))
            out[i, j] = d
            out[j, i] = d
    return out


haversine_matrix_numba = jit(_haversine_matrix_loop)


def haversine_matrix(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distances in km."""
    lat = np.ascontiguousarray(lat, dtype=np.float64)
    lon = np.ascontiguousarray(lon, dtype=np.float64)
    if USE_NUMBA:
        return haversine_matrix_numba(lat, lon)
    return haversine_matrix_numpy(lat, lon)


# ---------------------------------------------------------------------------
# all-pairs longest paths on a DAG


def longest_paths_numpy(order, succ_ptr, succ_idx, succ_w):
    n = order.shape[0]
    lp = np.full((n, n), NEG)
    for pos in range(n - 1, -1, -1):
        v = order[pos]
        row = lp[v]
        row[v] = 0.0
        for e in range(succ_ptr[v], succ_ptr[v + 1]):
            np.maximum(row, lp[succ_idx[e]] + succ_w[e], out=row)
    return lp


def _longest_paths_loop(order, succ_ptr, succ_idx, succ_w):
    n = order.shape[0]
    lp = np.full((n, n), -np.inf)
    for pos in range(n - 1, -1, -1):
        v = order[pos]
        lp[v, v] = 0.0
        for e in range(succ_ptr[v], succ_ptr[v + 1]):
            s = succ_idx[e]
            w = succ_w[e]
            for m in range(n):
                cand = lp[s, m] + w
                if cand > lp[v, m]:
                    lp[v, m] = cand
    return lp


longest_paths_numba = jit(_longest_paths_loop)


def longest_paths(order, succ_ptr, succ_idx, succ_w) -> np.ndarray:
    """``lp[a, b]`` = heaviest path weight a -> b, ``-inf`` when unreachable.

    ``order`` must be a topological order of the graph given in CSR form.
    """
    if USE_NUMBA:
        return longest_paths_numba(order, succ_ptr, succ_idx, succ_w)
    return longest_paths_numpy(order, succ_ptr, succ_idx, succ_w)


# ---------------------------------------------------------------------------
# pairwise Mahalanobis distances


def pairwise_mahalanobis_numpy(x: np.ndarray, precision_chol: np.ndarray) -> np.ndarray:
    z = x @ precision_chol
    sq = np.sum(z * z, axis=1)
    g = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(g, 0.0, out=g)
    np.fill_diagonal(g, 0.0)
    return np.sqrt(g)


def _pairwise_mahalanobis_loop(x, precision_chol):
    n, m = x.shape
    z = np.zeros((n, m))
    for i in range(n):
        for c in range(m):
            acc = 0.0
            for k in range(m):
                acc += x[i, k] * precision_chol[k, c]
            z[i, c] = acc
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for c in range(m):
                d = z[i, c] - z[j, c]
                acc += d * d
            d = math.sqrt(acc)
            out[i, j] = d
            out[j, i] = d
    return out


pairwise_mahalanobis_numba = jit(_pairwise_mahalanobis_loop)


def pairwise_mahalanobis(x: np.ndarray, precision_chol: np.ndarray) -> np.ndarray:
    """All pairwise distances ``||(x_i - x_j) W||`` with ``W W^T = Sigma^-1``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(precision_chol, dtype=np.float64)
    if USE_NUMBA:
        return pairwise_mahalanobis_numba(x, w)
    return pairwise_mahalanobis_numpy(x, w)


# ---------------------------------------------------------------------------
# insertion feasibility
#
# Stops of all routes are flattened into global nodes; route k owns nodes
# off[k] .. off[k+1]-1. F and B are earliest and latest service starts, LP
# holds all-pairs longest paths of the dependency DAG and RM[a, b] is the
# largest load after any stop a..b of one route.
#
# A check inserts at most four new nodes. Their effect on old node a is a
# max over "pushes" (b, T) of T + LP[b, a]; a push whose target can reach an
# already queried node closes a cycle.


def _value(a, F, LP, rb, rT, cnt):
    v = F[a]
    for z in range(cnt[0]):
        x = rT[z] + LP[rb[z], a]
        if x > v:
            v = x
    return v


_value = jit(_value)


def _query(a, F, LP, rb, rT, qa, cnt):
    qa[cnt[1]] = a
    cnt[1] += 1
    return _value(a, F, LP, rb, rT, cnt)


_query = jit(_query)


def _push(b, T, B, LP, rb, rT, qa, cnt):
    if T > B[b] + EPS:
        return False
    for z in range(cnt[1]):
        if LP[b, qa[z]] > NEG:
            return False
    rb[cnt[0]] = b
    rT[cnt[0]] = T
    cnt[0] += 1
    return True


_push = jit(_push)


def _check_direct(F, B, LP, RM, nloc, tt, lo, hi, cap, o, i, j, p, d, q, rb, rT, qa, cnt):
    cnt[0] = 0
    cnt[1] = 0
    if RM[o + i - 1, o + j - 1] + q > cap + EPS:
        return False
    a = o + i - 1
    vp = max(lo[p], _query(a, F, LP, rb, rT, qa, cnt) + tt[nloc[a], p])
    if vp > hi[p] + EPS:
        return False
    if i == j:
        vd = max(lo[d], vp + tt[p, d])
    else:
        b = o + i
        if not _push(b, vp + tt[p, nloc[b]], B, LP, rb, rT, qa, cnt):
            return False
        a = o + j - 1
        vd = max(lo[d], _query(a, F, LP, rb, rT, qa, cnt) + tt[nloc[a], d])
    if vd > hi[d] + EPS:
        return False
    b = o + j
    return _push(b, vd + tt[d, nloc[b]], B, LP, rb, rT, qa, cnt)


_check_direct = check_direct = jit(_check_direct)


def _check_transfer(F, B, LP, RM, nloc, tt, lo, hi, cap,
                    o1, i1, j1, m1, t, o2, i2, j2, m2, p, d, q,
                    rb, rT, qa, cnt, part):
    """Feasibility of a transferred insertion.

    Route 1 gets the pickup at gap ``i1`` and the drop either as a new visit
    at gap ``j1`` or, when ``m1``, merged into its existing visit ``j1`` of
    the transfer point. Route 2 gets the pick as a new visit at gap ``i2``
    (or merged into visit ``i2``) and the delivery at gap ``j2``.

    ``part`` 1 checks only route 1, ``part`` 2 only route 2 without the
    hand-over; both are necessary conditions used for pruning.
    """
    cnt[0] = 0
    cnt[1] = 0
    sync = NEG
    if part != 2:
        if RM[o1 + i1 - 1, o1 + j1 - 1] + q > cap + EPS:
            return False
        a = o1 + i1 - 1
        vp = max(lo[p], _query(a, F, LP, rb, rT, qa, cnt) + tt[nloc[a], p])
        if vp > hi[p] + EPS:
            return False
        if not m1 and j1 == i1:
            vD = max(lo[t], vp + tt[p, t])
        else:
            b = o1 + i1
            if not _push(b, vp + tt[p, nloc[b]], B, LP, rb, rT, qa, cnt):
                return False
            vD = NEG
            if not m1:
                a = o1 + j1 - 1
                vD = max(lo[t], _query(a, F, LP, rb, rT, qa, cnt) + tt[nloc[a], t])
        if m1:
            sync = _query(o1 + j1, F, LP, rb, rT, qa, cnt)
        else:
            if vD > hi[t] + EPS:
                return False
            b = o1 + j1
            if not _push(b, vD + tt[t, nloc[b]], B, LP, rb, rT, qa, cnt):
                return False
            sync = vD
        if part == 1:
            return True

    first = o2 + i2 if m2 else o2 + i2 - 1
    if RM[first, o2 + j2 - 1] + q > cap + EPS:
        return False
    if m2:
        if part == 0 and not _push(o2 + i2, sync, B, LP, rb, rT, qa, cnt):
            return False
        a = o2 + j2 - 1
        vd = max(lo[d], _query(a, F, LP, rb, rT, qa, cnt) + tt[nloc[a], d])
    else:
        a = o2 + i2 - 1
        vP = max(lo[t], sync, _query(a, F, LP, rb, rT, qa, cnt) + tt[nloc[a], t])
        if vP > hi[t] + EPS:
            return False
        if j2 == i2:
            vd = max(lo[d], vP + tt[t, d])
        else:
            b = o2 + i2
            if not _push(b, vP + tt[t, nloc[b]], B, LP, rb, rT, qa, cnt):
                return False
            a = o2 + j2 - 1
            vd = max(lo[d], _query(a, F, LP, rb, rT, qa, cnt) + tt[nloc[a], d])
    if vd > hi[d] + EPS:
        return False
    b = o2 + j2
    return _push(b, vd + tt[d, nloc[b]], B, LP, rb, rT, qa, cnt)


_check_transfer = check_transfer = jit(_check_transfer)


def _pair_delta(c, nloc, o, i, j, p, d):
    """Distance added by inserting ``p`` at gap ``i`` and ``d`` at gap ``j``."""
    a = nloc[o + i - 1]
    b = nloc[o + i]
    if i == j:
        return c[a, p] + c[p, d] + c[d, b] - c[a, b]
    a2 = nloc[o + j - 1]
    b2 = nloc[o + j]
    return c[a, p] + c[p, b] - c[a, b] + c[a2, d] + c[d, b2] - c[a2, b2]


_pair_delta = pair_delta = jit(_pair_delta)


def _single_delta(c, nloc, o, i, x):
    a = nloc[o + i - 1]
    b = nloc[o + i]
    return c[a, x] + c[x, b] - c[a, b]


_single_delta = single_delta = jit(_single_delta)


def _offer(bc, bi, n, m, cost, kind, k1, i1, j1, m1, t, k2, i2, j2, m2):
    """Insert a candidate into the sorted top-m buffer; returns the new fill."""
    if n == m and cost >= bc[m - 1]:
        return n
    if n < m:
        n += 1
    pos = n - 1
    while pos > 0 and bc[pos - 1] > cost:
        bc[pos] = bc[pos - 1]
        for z in range(10):
            bi[pos, z] = bi[pos - 1, z]
        pos -= 1
    bc[pos] = cost
    bi[pos, 0] = kind
    bi[pos, 1] = k1
    bi[pos, 2] = i1
    bi[pos, 3] = j1
    bi[pos, 4] = m1
    bi[pos, 5] = t
    bi[pos, 6] = k2
    bi[pos, 7] = i2
    bi[pos, 8] = j2
    bi[pos, 9] = m2
    return n


_offer = jit(_offer)


def _scan_direct(F, B, LP, RM, nloc, tt, c, lo, hi, cap, o, L, k, p, d, q, bc, bi, n, m):
    rb = np.zeros(8, dtype=np.int64)
    rT = np.zeros(8)
    qa = np.zeros(8, dtype=np.int64)
    cnt = np.zeros(2, dtype=np.int64)
    for i in range(1, L):
        for j in range(i, L):
            cost = _pair_delta(c, nloc, o, i, j, p, d)
            if n == m and cost >= bc[m - 1]:
                continue
            if _check_direct(F, B, LP, RM, nloc, tt, lo, hi, cap, o, i, j, p, d, q, rb, rT, qa, cnt):
                n = _offer(bc, bi, n, m, cost, 0, k, i, j, 0, -1, -1, -1, -1, 0)
    return n


_scan_direct = scan_direct = jit(_scan_direct)


def _scan_transfer(F, B, LP, RM, nloc, tt, c, lo, hi, cap,
                   o1, L1, k1, v1, o2, L2, k2, v2, t, p, d, q, bc, bi, n, m):
    """Best transferred insertions through ``t`` from route k1 to route k2.

    ``v1``/``v2`` are the routes' existing visit of ``t`` or -1.
    """
    rb = np.zeros(8, dtype=np.int64)
    rT = np.zeros(8)
    qa = np.zeros(8, dtype=np.int64)
    cnt = np.zeros(2, dtype=np.int64)
    m1 = 1 if v1 >= 0 else 0
    m2 = 1 if v2 >= 0 else 0

    cap1 = L1 * L1
    a_i = np.empty(cap1, dtype=np.int64)
    a_j = np.empty(cap1, dtype=np.int64)
    a_c = np.empty(cap1)
    na = 0
    for i1 in range(1, v1 + 1 if m1 else L1):
        for j1 in range(v1 if m1 else i1, v1 + 1 if m1 else L1):
            if _check_transfer(F, B, LP, RM, nloc, tt, lo, hi, cap, o1, i1, j1, m1, t,
                               o2, 1, 1, 0, p, d, q, rb, rT, qa, cnt, 1):
                a_i[na] = i1
                a_j[na] = j1
                if m1:
                    a_c[na] = _single_delta(c, nloc, o1, i1, p)
                else:
                    a_c[na] = _pair_delta(c, nloc, o1, i1, j1, p, t)
                na += 1

    cap2 = L2 * L2
    b_i = np.empty(cap2, dtype=np.int64)
    b_j = np.empty(cap2, dtype=np.int64)
    b_c = np.empty(cap2)
    nb = 0
    if m2:
        first, stop = v2, v2 + 1
    else:
        first, stop = 1, L2
    for i2 in range(first, stop):
        jlo = i2 + 1 if m2 else i2
        for j2 in range(jlo, L2):
            if _check_transfer(F, B, LP, RM, nloc, tt, lo, hi, cap, o1, 1, 1, 0, t,
                               o2, i2, j2, m2, p, d, q, rb, rT, qa, cnt, 2):
                b_i[nb] = i2
                b_j[nb] = j2
                if m2:
                    b_c[nb] = _single_delta(c, nloc, o2, j2, d)
                else:
                    b_c[nb] = _pair_delta(c, nloc, o2, i2, j2, t, d)
                nb += 1
    if na == 0 or nb == 0:
        return n

    ord1 = np.argsort(a_c[:na], kind="mergesort")
    ord2 = np.argsort(b_c[:nb], kind="mergesort")
    c2min = b_c[ord2[0]]
    for x in range(na):
        ia = ord1[x]
        c1 = a_c[ia]
        if n == m and c1 + c2min >= bc[m - 1]:
            break
        for y in range(nb):
            ib = ord2[y]
            cost = c1 + b_c[ib]
            if n == m and cost >= bc[m - 1]:
                break
            if _check_transfer(F, B, LP, RM, nloc, tt, lo, hi, cap, o1, a_i[ia], a_j[ia], m1, t,
                               o2, b_i[ib], b_j[ib], m2, p, d, q, rb, rT, qa, cnt, 0):
                n = _offer(bc, bi, n, m, cost, 1, k1, a_i[ia], a_j[ia], m1, t, k2, b_i[ib], b_j[ib], m2)
    return n


_scan_transfer = scan_transfer = jit(_scan_transfer)
