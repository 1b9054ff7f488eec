"""Hot inner loops with a numba path and a pure-numpy fallback.

Set ``DMSG_DISABLE_NUMBA=1`` before import to force the numpy path. Both
paths iterate in a fixed order, so each is bit-deterministic on its own; the
two paths may differ from each other in the last ulp.
"""

import os

import numpy as np

_DISABLED = os.environ.get("DMSG_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in a subprocess
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn
        return wrap

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# sparse (CSR) x dense
# ---------------------------------------------------------------------------

@njit(cache=True)
def _csr_matmul_nb(indptr, indices, data, b):
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, b.shape[1]))
    for i in range(n_rows):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            a = data[p]
            for k in range(b.shape[1]):
                out[i, k] += a * b[j, k]
    return out


def _csr_matmul_np(indptr, indices, data, b):
    n_rows = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    out = np.zeros((n_rows, b.shape[1]))
    np.add.at(out, rows, data[:, None] * b[indices])
    return out


def csr_matmul(indptr, indices, data, b):
    b = np.ascontiguousarray(b, dtype=np.float64)
    if HAVE_NUMBA:
        return _csr_matmul_nb(indptr, indices, data, b)
    return _csr_matmul_np(indptr, indices, data, b)


# ---------------------------------------------------------------------------
# greedy buffer selection
# ---------------------------------------------------------------------------

@njit(cache=True)
def _min_dist_nb(P_cand, P_set):
    m = P_cand.shape[0]
    out = np.full(m, np.inf)
    for a in range(m):
        best = np.inf
        for r in range(P_set.shape[0]):
            s = 0.0
            for k in range(P_cand.shape[1]):
                d = P_cand[a, k] - P_set[r, k]
                s += d * d
            if s < best:
                best = s
        out[a] = np.sqrt(best)
    return out


_CHUNK = 512


def _sqdist_np(X, Y):
    diff = X[:, None, :] - Y[None, :, :]
    return (diff * diff).sum(axis=2)


def _min_dist_np(P_cand, P_set):
    if P_set.shape[0] == 0:
        return np.full(P_cand.shape[0], np.inf)
    out = np.empty(P_cand.shape[0])
    for s in range(0, P_cand.shape[0], _CHUNK):
        out[s:s + _CHUNK] = np.sqrt(_sqdist_np(P_cand[s:s + _CHUNK], P_set).min(axis=1))
    return out


def min_dist(P_cand, P_set):
    """Distance from every row of ``P_cand`` to its nearest row in ``P_set``.

    Returns ``inf`` for every candidate when ``P_set`` is empty.
    """
    P_cand = np.ascontiguousarray(P_cand, dtype=np.float64)
    P_set = np.ascontiguousarray(P_set, dtype=np.float64).reshape(-1, P_cand.shape[1])
    if HAVE_NUMBA:
        return _min_dist_nb(P_cand, P_set)
    return _min_dist_np(P_cand, P_set)


@njit(cache=True)
def _intra_gains_nb(P_cand, P_own, own_nearest):
    m = P_cand.shape[0]
    r = P_own.shape[0]
    out = np.zeros(m)
    for a in range(m):
        nearest = np.inf
        delta = 0.0
        for u in range(r):
            s = 0.0
            for k in range(P_cand.shape[1]):
                d = P_cand[a, k] - P_own[u, k]
                s += d * d
            d_uv = np.sqrt(s)
            if d_uv < nearest:
                nearest = d_uv
            cur = own_nearest[u]
            if cur == np.inf:
                delta += d_uv
            elif d_uv < cur:
                delta += d_uv - cur
        if nearest == np.inf:
            nearest = 0.0
        out[a] = nearest + delta
    return out


def _intra_gains_np(P_cand, P_own, own_nearest):
    if P_own.shape[0] == 0:
        return np.zeros(P_cand.shape[0])
    fresh = np.isinf(own_nearest)
    cur = np.where(fresh, 0.0, own_nearest)
    out = np.empty(P_cand.shape[0])
    for s in range(0, P_cand.shape[0], _CHUNK):
        d = np.sqrt(_sqdist_np(P_cand[s:s + _CHUNK], P_own))
        upd = np.where(fresh[None, :], d, np.minimum(d, own_nearest[None, :]))
        out[s:s + _CHUNK] = d.min(axis=1) + (upd - cur[None, :]).sum(axis=1)
    return out


def intra_gains(P_cand, P_own, own_nearest):
    """Change of the intra-diversity part of the set score for each candidate.

    ``own_nearest[u]`` is member u's current distance to its closest other
    member (``inf`` when u is alone). The result adds the candidate's own
    nearest-member distance and the improvement it brings to every member.
    """
    P_cand = np.ascontiguousarray(P_cand, dtype=np.float64)
    P_own = np.ascontiguousarray(P_own, dtype=np.float64).reshape(-1, P_cand.shape[1])
    own_nearest = np.ascontiguousarray(own_nearest, dtype=np.float64)
    if HAVE_NUMBA:
        return _intra_gains_nb(P_cand, P_own, own_nearest)
    return _intra_gains_np(P_cand, P_own, own_nearest)


@njit(cache=True)
def _fold_delta_nb(P_cand, P_set, set_nearest):
    m = P_cand.shape[0]
    out = np.zeros(m)
    for a in range(m):
        delta = 0.0
        for u in range(P_set.shape[0]):
            s = 0.0
            for k in range(P_cand.shape[1]):
                d = P_cand[a, k] - P_set[u, k]
                s += d * d
            d_uv = np.sqrt(s)
            cur = set_nearest[u]
            if cur == np.inf:
                delta += d_uv
            elif d_uv < cur:
                delta += d_uv - cur
        out[a] = delta
    return out


def _fold_delta_np(P_cand, P_set, set_nearest):
    if P_set.shape[0] == 0:
        return np.zeros(P_cand.shape[0])
    fresh = np.isinf(set_nearest)
    cur = np.where(fresh, 0.0, set_nearest)
    out = np.empty(P_cand.shape[0])
    for s in range(0, P_cand.shape[0], _CHUNK):
        d = np.sqrt(_sqdist_np(P_cand[s:s + _CHUNK], P_set))
        upd = np.where(fresh[None, :], d, np.minimum(d, set_nearest[None, :]))
        out[s:s + _CHUNK] = (upd - cur[None, :]).sum(axis=1)
    return out


def fold_delta(P_cand, P_set, set_nearest):
    """Total change of ``set_nearest`` if each candidate joined the reference set.

    ``set_nearest[u]`` is the current distance of row u of ``P_set`` to the
    reference set (``inf``: undefined, replaced by the new distance).
    """
    P_cand = np.ascontiguousarray(P_cand, dtype=np.float64)
    P_set = np.ascontiguousarray(P_set, dtype=np.float64).reshape(-1, P_cand.shape[1])
    set_nearest = np.ascontiguousarray(set_nearest, dtype=np.float64)
    if HAVE_NUMBA:
        return _fold_delta_nb(P_cand, P_set, set_nearest)
    return _fold_delta_np(P_cand, P_set, set_nearest)
