"""Diversified memory selection.

Buffers are scored on model output probabilities: a node contributes its
distance to the nearest other member of its own buffer (intra-diversity) plus
the mean over the other non-empty buffers of its distance to their nearest
member (inter-diversity). The set score sums this over every buffer.
:func:`greedy_select` grows the buffers of newly seen classes round-robin,
each step adding the candidate with the largest gain in the set score.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

TIE_TOL = 1e-9    # relative; gains closer than this count as tied


@dataclass
class MemoryBuffers:
    capacity: int
    buffers: dict = field(default_factory=dict)   # class id -> list of node ids, selection order

    def copy(self):
        return MemoryBuffers(self.capacity, {c: list(ids) for c, ids in self.buffers.items()})

    @property
    def classes(self):
        return list(self.buffers)

    def non_empty(self):
        return [c for c, ids in self.buffers.items() if ids]

    def nodes_and_labels(self):
        """All buffered node ids with their class ids, grouped by class in insertion order."""
        ids, labels = [], []
        for c, members in self.buffers.items():
            ids.extend(members)
            labels.extend([c] * len(members))
        return np.array(ids, dtype=np.int64), np.array(labels, dtype=np.int64)

    def total(self):
        return sum(len(v) for v in self.buffers.values())

    def to_dict(self):
        return {str(c): [int(v) for v in ids] for c, ids in sorted(self.buffers.items())}


def buffers_json(history):
    """Serialise ``[(task, MemoryBuffers), ...]`` with stable ordering."""
    return json.dumps([{"task": int(t), "buffers": mb.to_dict()} for t, mb in history], indent=1)


# ---------------------------------------------------------------------------
# reference scoring (full recomputation)
# ---------------------------------------------------------------------------

def _dist_to_set(v, members, P):
    if len(members) == 0:
        return 0.0
    return float(np.min(np.linalg.norm(P[np.asarray(members)] - P[v], axis=1)))


def prob_distance(v, buffer, P):
    """Distance between node ``v``'s probability row and the closest buffer member."""
    if len(buffer) == 0:
        raise ValueError("distance to an empty buffer is undefined")
    return _dist_to_set(v, buffer, P)


def _score(i, buffers, P):
    own = buffers[i]
    others = [c for c, ids in buffers.items() if c != i and ids]
    m = len(others) + (1 if own else 0)
    total = 0.0
    for v in own:
        intra = _dist_to_set(v, [u for u in own if u != v], P)
        inter = sum(_dist_to_set(v, buffers[j], P) for j in others)
        total += intra + (inter / (m - 1) if m > 1 else 0.0)
    return total


def buffer_score(i, buffers, P):
    """Set score of buffer ``i`` given all buffers (dict class -> ids or MemoryBuffers)."""
    buffers = buffers.buffers if isinstance(buffers, MemoryBuffers) else buffers
    if not buffers.get(i):
        raise ValueError(f"buffer {i} is empty")
    if sum(1 for ids in buffers.values() if ids) < 2:
        raise ValueError("scoring needs at least two non-empty buffers")
    return _score(i, buffers, P)


def set_score(buffers, P):
    """Sum of :func:`buffer_score` over all non-empty buffers."""
    buffers = buffers.buffers if isinstance(buffers, MemoryBuffers) else buffers
    return sum(_score(c, buffers, P) for c, ids in buffers.items() if ids)


def marginal_gain(v, i, buffers, P):
    """Change of the set score when ``v`` joins buffer ``i`` (full recomputation).

    Besides ``v``'s own terms this counts the members of other buffers whose
    nearest distance to buffer ``i`` shrinks.
    """
    buffers = buffers.buffers if isinstance(buffers, MemoryBuffers) else buffers
    if v in buffers.get(i, []):
        raise ValueError(f"node {v} is already in buffer {i}")
    grown = dict(buffers)
    grown[i] = list(buffers.get(i, [])) + [v]
    return set_score(grown, P) - set_score(buffers, P)


# ---------------------------------------------------------------------------
# greedy selection
# ---------------------------------------------------------------------------

def greedy_select(prev, candidates, P, b, columns=None):
    """Fill one buffer per novel class.

    ``prev``: MemoryBuffers of earlier classes (may be empty).
    ``candidates``: class id -> training node ids of that novel class.
    ``P``: probability matrix indexed by node id.
    ``columns``: class id -> column of P holding that class (default: the id).

    Each buffer starts from its class's most confident node, then buffers
    take turns adding the candidate of largest marginal gain until each
    holds ``min(b, |candidates|)`` nodes. Ties go to the lowest node id.
    """
    if b < 1:
        raise ValueError("buffer capacity must be >= 1")
    P = np.asarray(P, dtype=np.float64)
    out = prev.copy() if prev is not None else MemoryBuffers(b)
    out.capacity = b
    novel = list(candidates)
    cand = {}
    for c in novel:
        ids = np.unique(np.asarray(candidates[c], dtype=np.int64))
        if ids.size == 0:
            raise ValueError(f"class {c} has no candidate nodes")
        if c in out.buffers and out.buffers[c]:
            raise ValueError(f"class {c} already has a buffer")
        cand[c] = ids
    col = (lambda c: c) if columns is None else columns.__getitem__

    for c in novel:
        conf = P[cand[c], col(c)]
        out.buffers[c] = [int(cand[c][int(np.argmax(conf))])]

    target = {c: min(b, cand[c].size) for c in novel}
    others_of = {c: [j for j in out.buffers if j != c and out.buffers[j]] for c in novel}
    n_nonempty = len(out.non_empty())
    norm = 1.0 / (n_nonempty - 1) if n_nonempty > 1 else 0.0

    Pc = {c: P[cand[c]] for c in novel}
    # near[c][j]: each candidate of c to its nearest member of buffer j
    # back[c][j]: each member of j to its nearest member of buffer c
    # seen[c, j]: members of j already folded into both caches
    near = {c: {j: _kernels.min_dist(Pc[c], P[out.buffers[j]]) for j in others_of[c]} for c in novel}
    back = {c: {j: _kernels.min_dist(P[out.buffers[j]], P[out.buffers[c]]) for j in others_of[c]} for c in novel}
    seen = {(c, j): len(out.buffers[j]) for c in novel for j in others_of[c]}
    own_nearest = {c: np.full(1, np.inf) for c in novel}
    taken = {c: np.isin(cand[c], out.buffers[c]) for c in novel}

    while any(len(out.buffers[c]) < target[c] for c in novel):
        for c in novel:
            if len(out.buffers[c]) >= target[c]:
                continue
            members = out.buffers[c]
            for j in others_of[c]:
                n_j = len(out.buffers[j])
                if n_j > seen[c, j]:
                    fresh = out.buffers[j][seen[c, j]:]
                    near[c][j] = np.minimum(near[c][j], _kernels.min_dist(Pc[c], P[fresh]))
                    back[c][j] = np.append(back[c][j], _kernels.min_dist(P[fresh], P[members]))
                    seen[c, j] = n_j
            gains = _kernels.intra_gains(Pc[c], P[members], own_nearest[c])
            for j in others_of[c]:
                # v's own inter term, and the loss v inflicts on j's inter term
                gains = gains + norm * (near[c][j] + _kernels.fold_delta(Pc[c], P[out.buffers[j]], back[c][j]))
            gains[taken[c]] = -np.inf
            # lowest id among gains equal up to rounding (candidates are sorted)
            best = gains.max()
            pick = int(np.flatnonzero(gains >= best - TIE_TOL * max(1.0, abs(best)))[0])
            v = int(cand[c][pick])
            d = np.linalg.norm(P[members] - P[v], axis=1)
            upd = np.where(np.isinf(own_nearest[c]), d, np.minimum(own_nearest[c], d))
            own_nearest[c] = np.append(upd, d.min())
            for j in others_of[c]:
                back[c][j] = np.minimum(back[c][j], np.linalg.norm(P[out.buffers[j]] - P[v], axis=1))
            members.append(v)
            taken[c][pick] = True
    return out


# ---------------------------------------------------------------------------
# Gaussian 2-Wasserstein diagnostic
# ---------------------------------------------------------------------------

@dataclass
class GaussianStats:
    mean: np.ndarray
    var: np.ndarray      # diagonal covariance

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.var = np.asarray(self.var, dtype=np.float64).reshape(-1)
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and variance dimensions differ")
        if np.any(self.var < 0):
            raise ValueError("variances must be non-negative")

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=np.float64)
        var = x.var(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
        return cls(x.mean(axis=0), var)


def gaussian_w2_sq(p: GaussianStats, q: GaussianStats):
    """Squared 2-Wasserstein distance between diagonal Gaussians."""
    if p.mean.shape != q.mean.shape:
        raise ValueError("dimension mismatch")
    dm = p.mean - q.mean
    ds = np.sqrt(p.var) - np.sqrt(q.var)
    return float(dm @ dm + ds @ ds)


def buffer_w2_diagnostic(class_embeddings, buffer_embeddings):
    """W2^2 between diagonal Gaussians fitted to a class and to its buffer."""
    x = np.asarray(class_embeddings, dtype=np.float64)
    y = np.asarray(buffer_embeddings, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("both sets must be non-empty 2-D arrays")
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch")
    if y.shape[0] == 1:
        warnings.warn("singleton buffer: variance taken as 0", RuntimeWarning, stacklevel=2)
    return gaussian_w2_sq(GaussianStats.fit(x), GaussianStats.fit(y))
