"""Hot numeric loops, each with a numba and a pure-numpy implementation.

Both implementations perform the same floating-point operations in the same
order, so results are bit-identical across backends. Public entry points
dispatch on :func:`turbine_nbm._backend.get_backend`.
"""

import numpy as np
from scipy.signal import lfilter

from . import _backend
from ._backend import njit

# --------------------------------------------------------------------------
# Split scan: cost of every cut position along one sorted feature.
# --------------------------------------------------------------------------


@njit
def _split_costs_nb(xs, ys, min_leaf, weighted):
    r, n = ys.shape
    costs = np.full(max(r - 1, 0), np.inf)
    if r < 2:
        return costs
    pre1 = np.empty((r, n))
    pre2 = np.empty((r, n))
    suf1 = np.empty((r, n))
    suf2 = np.empty((r, n))
    for p in range(n):
        a1 = ys[0, p]
        a2 = ys[0, p] * ys[0, p]
        pre1[0, p] = a1
        pre2[0, p] = a2
        for i in range(1, r):
            v = ys[i, p]
            a1 = a1 + v
            a2 = a2 + v * v
            pre1[i, p] = a1
            pre2[i, p] = a2
        a1 = ys[r - 1, p]
        a2 = ys[r - 1, p] * ys[r - 1, p]
        suf1[r - 1, p] = a1
        suf2[r - 1, p] = a2
        for i in range(r - 2, -1, -1):
            v = ys[i, p]
            a1 = a1 + v
            a2 = a2 + v * v
            suf1[i, p] = a1
            suf2[i, p] = a2
    for i in range(r - 1):
        nl = i + 1
        nr = r - nl
        if nl < min_leaf or nr < min_leaf or not xs[i] < xs[i + 1]:
            continue
        fl = float(nl)
        fr = float(nr)
        sl = 0.0
        sr = 0.0
        for p in range(n):
            sl = sl + (pre2[i, p] - pre1[i, p] * pre1[i, p] / fl)
            sr = sr + (suf2[i + 1, p] - suf1[i + 1, p] * suf1[i + 1, p] / fr)
        sl = max(sl, 0.0)
        sr = max(sr, 0.0)
        if weighted:
            costs[i] = (fl * sl + fr * sr) / (fl + fr)
        else:
            costs[i] = sl + sr
    return costs


def _split_costs_np(xs, ys, min_leaf, weighted):
    r, n = ys.shape
    if r < 2:
        return np.full(0, np.inf)
    sq = ys * ys
    pre1 = np.cumsum(ys, axis=0)[:-1]
    pre2 = np.cumsum(sq, axis=0)[:-1]
    suf1 = np.cumsum(ys[::-1], axis=0)[::-1][1:]
    suf2 = np.cumsum(sq[::-1], axis=0)[::-1][1:]
    fl = np.arange(1, r, dtype=np.float64)
    fr = r - fl
    sl = np.zeros(r - 1)
    sr = np.zeros(r - 1)
    for p in range(n):
        sl = sl + (pre2[:, p] - pre1[:, p] * pre1[:, p] / fl)
        sr = sr + (suf2[:, p] - suf1[:, p] * suf1[:, p] / fr)
    sl = np.maximum(sl, 0.0)
    sr = np.maximum(sr, 0.0)
    if weighted:
        costs = (fl * sl + fr * sr) / (fl + fr)
    else:
        costs = sl + sr
    ok = (fl >= min_leaf) & (fr >= min_leaf) & (xs[:-1] < xs[1:])
    return np.where(ok, costs, np.inf)


def split_costs(xs, ys, min_leaf, weighted):
    """Split cost at each cut between sorted rows ``i`` and ``i + 1``.

    ``xs`` must be sorted ascending and ``ys`` (rows x targets) aligned with it.
    Cuts that fall inside a run of equal ``xs`` values or leave fewer than
    ``min_leaf`` rows on either side get ``inf``.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if _backend.use_numba():
        return _split_costs_nb(xs, ys, int(min_leaf), bool(weighted))
    return _split_costs_np(xs, ys, int(min_leaf), bool(weighted))


# --------------------------------------------------------------------------
# Tree routing.
# --------------------------------------------------------------------------


@njit
def _route_nb(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def _route_np(X, feature, threshold, left, right):
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.flatnonzero(feature[node] >= 0)
    while active.size:
        nd = node[active]
        go_left = X[active, feature[nd]] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        active = active[feature[node[active]] >= 0]
    return node


def route(X, feature, threshold, left, right):
    """Leaf index reached by each row of ``X`` (``x <= threshold`` goes left)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if _backend.use_numba():
        return _route_nb(X, feature, threshold, left, right)
    return _route_np(X, feature, threshold, left, right)


# --------------------------------------------------------------------------
# Brute-force K nearest neighbours.
# --------------------------------------------------------------------------


@njit
def _knn_nb(Xtr, Ytr, Xq, K):
    m, k = Xtr.shape
    n = Ytr.shape[1]
    q = Xq.shape[0]
    out = np.empty((q, n))
    d = np.empty(m)
    acc = np.empty(n)
    for j in range(q):
        for i in range(m):
            s = 0.0
            for f in range(k):
                t = Xtr[i, f] - Xq[j, f]
                s = s + t * t
            d[i] = np.sqrt(s)
        dk = np.partition(d, K - 1)[K - 1]
        need = K
        for i in range(m):
            if d[i] < dk:
                need -= 1
        first = True
        for i in range(m):
            take = d[i] < dk
            if not take and d[i] == dk and need > 0:
                take = True
                need -= 1
            if take:
                if first:
                    for p in range(n):
                        acc[p] = Ytr[i, p]
                    first = False
                else:
                    for p in range(n):
                        acc[p] = acc[p] + Ytr[i, p]
        for p in range(n):
            out[j, p] = acc[p] / K
    return out


def _knn_np(Xtr, Ytr, Xq, K, chunk=128):
    m, k = Xtr.shape
    out = np.empty((Xq.shape[0], Ytr.shape[1]))
    for start in range(0, Xq.shape[0], chunk):
        xq = Xq[start:start + chunk]
        s = np.zeros((xq.shape[0], m))
        for f in range(k):
            t = Xtr[None, :, f] - xq[:, None, f]
            s = s + t * t
        d = np.sqrt(s)
        dk = np.partition(d, K - 1, axis=1)[:, K - 1:K]
        lt = d < dk
        eq = d == dk
        need = K - lt.sum(axis=1, keepdims=True)
        sel = lt | (eq & (np.cumsum(eq, axis=1) <= need))
        for r in range(xq.shape[0]):
            idx = np.flatnonzero(sel[r])
            out[start + r] = np.cumsum(Ytr[idx], axis=0)[-1] / K
    return out


def knn_predict(Xtr, Ytr, Xq, K):
    """Mean target of the ``K`` nearest training rows for every query row.

    Euclidean distance; ties at the K-th distance go to the lower training
    index; the mean is accumulated over selected rows in ascending index order.
    """
    Xtr = np.ascontiguousarray(Xtr, dtype=np.float64)
    Ytr = np.ascontiguousarray(Ytr, dtype=np.float64)
    Xq = np.ascontiguousarray(Xq, dtype=np.float64)
    if Xq.shape[0] == 0:
        return np.empty((0, Ytr.shape[1]))
    if _backend.use_numba():
        return _knn_nb(Xtr, Ytr, Xq, int(K))
    return _knn_np(Xtr, Ytr, Xq, int(K))


# --------------------------------------------------------------------------
# AR(1) recursion z[t] = rho * z[t-1] + e[t], z[0] = e[0].
# --------------------------------------------------------------------------


@njit
def _ar1_nb(innov, rho):
    z = np.empty_like(innov)
    if innov.size == 0:
        return z
    z[0] = innov[0]
    for t in range(1, innov.size):
        z[t] = rho * z[t - 1] + innov[t]
    return z


def _ar1_np(innov, rho):
    return lfilter([1.0], [1.0, -rho], innov)


def ar1_filter(innov, rho):
    innov = np.ascontiguousarray(innov, dtype=np.float64)
    if _backend.use_numba():
        return _ar1_nb(innov, float(rho))
    return _ar1_np(innov, float(rho))
