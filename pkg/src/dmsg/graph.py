"""Growing graphs under the class-incremental protocol.

A :class:`GrowingGraphSource` holds the whole graph; :func:`partition_tasks`
groups its classes into tasks and :func:`snapshot_at` materialises the
cumulative subgraph visible at a given task.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics.sparse import CSRMatrix

TRAIN, VAL, TEST = 0, 1, 2


class GraphFormatError(ValueError):
    pass


def _canonical_edges(edges):
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if e.size:
        e = np.unique(e, axis=0)
    return e


@dataclass
class GrowingGraphSource:
    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    class_order: np.ndarray = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise GraphFormatError("features must be a node_count x feature_dim matrix with feature_dim >= 1")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.node_count,):
            raise GraphFormatError("need exactly one label per node")
        self.edges = _canonical_edges(self.edges)
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.node_count):
            raise GraphFormatError("dangling reference: edge endpoint outside the node set")
        classes = np.unique(self.labels)
        if self.class_order is None:
            self.class_order = classes
        self.class_order = np.asarray(self.class_order, dtype=np.int64)
        if len(set(self.class_order.tolist())) != len(self.class_order) or \
                set(self.class_order.tolist()) != set(classes.tolist()):
            raise GraphFormatError("class_order must list every label exactly once")

    @property
    def node_count(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return len(self.class_order)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def _read_rows(path):
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            rows.append((lineno, s.split("\t")))
    return rows


def _int(tok, path, lineno):
    try:
        return int(tok)
    except ValueError:
        raise GraphFormatError(f"{path.name}:{lineno}: expected an integer, got {tok!r}") from None


def load_graph(directory, class_order=None):
    """Read ``edges.tsv``, ``features.tsv`` and ``labels.tsv`` from a directory."""
    d = Path(directory)
    feat_rows = _read_rows(d / "features.tsv")
    label_rows = _read_rows(d / "labels.tsv")
    edge_rows = _read_rows(d / "edges.tsv")

    feats = {}
    dim = None
    for lineno, toks in feat_rows:
        nid = _int(toks[0], d / "features.tsv", lineno)
        try:
            vals = [float(x) for x in toks[1:]]
        except ValueError:
            raise GraphFormatError(f"features.tsv:{lineno}: non-numeric feature") from None
        if dim is None:
            dim = len(vals)
        if len(vals) != dim or dim < 1:
            raise GraphFormatError(f"features.tsv:{lineno}: expected {dim} features, got {len(vals)}")
        if nid in feats:
            raise GraphFormatError(f"features.tsv:{lineno}: duplicate row for node {nid}")
        feats[nid] = vals
    n = len(feats)
    if set(feats) != set(range(n)):
        missing = sorted(set(range(max(feats, default=-1) + 1)) - set(feats))
        raise GraphFormatError(f"node ids must be 0..{n - 1}; missing feature row for node(s) {missing[:5]}")

    labels = np.full(n, -1, dtype=np.int64)
    for lineno, toks in label_rows:
        if len(toks) != 2:
            raise GraphFormatError(f"labels.tsv:{lineno}: expected 'node_id<TAB>class_id'")
        nid = _int(toks[0], d / "labels.tsv", lineno)
        if not 0 <= nid < n:
            raise GraphFormatError(f"labels.tsv:{lineno}: dangling reference to node {nid}")
        labels[nid] = _int(toks[1], d / "labels.tsv", lineno)
    if np.any(labels < 0):
        raise GraphFormatError(f"node {int(np.flatnonzero(labels < 0)[0])} has no label")

    edges = []
    for lineno, toks in edge_rows:
        if len(toks) != 2:
            raise GraphFormatError(f"edges.tsv:{lineno}: expected 'src<TAB>dst'")
        u, v = (_int(t, d / "edges.tsv", lineno) for t in toks)
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edges.tsv:{lineno}: dangling reference to node {max(u, v)}")
        edges.append((u, v))

    features = np.array([feats[i] for i in range(n)], dtype=np.float64)
    return GrowingGraphSource(features, labels, np.array(edges, dtype=np.int64).reshape(-1, 2), class_order)


def save_graph(src, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# src\tdst\n")
        for u, v in src.edges:
            fh.write(f"{u}\t{v}\n")
    with open(d / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# node_id\tfeatures...\n")
        for i, row in enumerate(src.features):
            fh.write(str(i) + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
    with open(d / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# node_id\tclass_id\n")
        for i, y in enumerate(src.labels):
            fh.write(f"{i}\t{y}\n")
    return d


# ---------------------------------------------------------------------------
# tasks, splits, snapshots
# ---------------------------------------------------------------------------

@dataclass
class TaskSequence:
    k: int
    tasks: list                      # list of class-id arrays, in order
    class_nodes: dict                # class id -> sorted node ids

    def __len__(self):
        return len(self.tasks)

    def classes_upto(self, t):
        """Classes of tasks 1..t, in task order."""
        return np.concatenate(self.tasks[:t]) if t > 0 else np.zeros(0, dtype=np.int64)

    def task_of_class(self, c):
        for t, cls in enumerate(self.tasks, 1):
            if c in cls:
                return t
        raise KeyError(c)


def partition_tasks(src, k):
    if k < 1:
        raise ValueError("classes per task must be >= 1")
    if k > src.n_classes:
        raise ValueError(f"k={k} exceeds the number of classes ({src.n_classes})")
    order = src.class_order
    tasks = [order[s:s + k].copy() for s in range(0, len(order), k)]
    class_nodes = {int(c): np.flatnonzero(src.labels == c) for c in order}
    return TaskSequence(k, tasks, class_nodes)


@dataclass
class Split:
    train: dict
    val: dict
    test: dict
    ratios: tuple
    seed: int

    def tags(self, node_count):
        t = np.full(node_count, -1, dtype=np.int64)
        for tag, part in ((TRAIN, self.train), (VAL, self.val), (TEST, self.test)):
            for ids in part.values():
                t[ids] = tag
        return t


def split_class(node_ids, ratios, seed, class_id):
    """Per-class stratified split; depends only on (seed, class id, node ids)."""
    node_ids = np.sort(np.asarray(node_ids, dtype=np.int64))
    r_train, r_val = ratios[0], ratios[1]
    n = len(node_ids)
    n_train = int(round(r_train * n))
    n_val = min(int(round(r_val * n)), n - n_train)
    perm = np.random.default_rng([int(seed), int(class_id)]).permutation(n)
    shuffled = node_ids[perm]
    return (np.sort(shuffled[:n_train]), np.sort(shuffled[n_train:n_train + n_val]),
            np.sort(shuffled[n_train + n_val:]))


def make_split(seq, ratios=(0.6, 0.2, 0.2), seed=0):
    if len(ratios) != 3 or min(ratios) < 0 or not math.isclose(sum(ratios), 1.0):
        raise ValueError("split ratios must be three non-negative numbers summing to 1")
    train, val, test = {}, {}, {}
    for c, ids in seq.class_nodes.items():
        train[c], val[c], test[c] = split_class(ids, ratios, seed, c)
    return Split(train, val, test, tuple(ratios), seed)


def normalize_adjacency(edges, node_count):
    """Symmetric normalisation with self-loops: D^-1/2 (A + I) D^-1/2."""
    e = _canonical_edges(edges)
    rows = np.concatenate([e[:, 0], e[:, 1], np.arange(node_count)])
    cols = np.concatenate([e[:, 1], e[:, 0], np.arange(node_count)])
    deg = np.bincount(rows, minlength=node_count).astype(np.float64)
    inv = 1.0 / np.sqrt(deg)
    return CSRMatrix.from_coo(rows, cols, inv[rows] * inv[cols], (node_count, node_count))


@dataclass
class Snapshot:
    t: int
    nodes: np.ndarray            # global ids, sorted
    edges: np.ndarray            # global id pairs of the induced subgraph
    adj: CSRMatrix               # normalised, in local indexing
    features: np.ndarray
    labels: np.ndarray           # global class ids, local order
    split: np.ndarray            # TRAIN / VAL / TEST per local node
    local: np.ndarray = field(repr=False)   # global id -> local id (-1 if absent)

    @property
    def node_count(self):
        return len(self.nodes)

    def select(self, classes, tag):
        """Local ids of nodes of the given classes carrying split ``tag``."""
        mask = np.isin(self.labels, np.asarray(classes)) & (self.split == tag)
        return np.flatnonzero(mask)


def snapshot_at(src, seq, t, split_ratios=(0.6, 0.2, 0.2), seed=0, split=None):
    if not 1 <= t <= len(seq):
        raise ValueError(f"task index {t} out of range 1..{len(seq)}")
    if split is None:
        split = make_split(seq, split_ratios, seed)
    classes = seq.classes_upto(t)
    nodes = np.sort(np.concatenate([seq.class_nodes[int(c)] for c in classes]))
    local = np.full(src.node_count, -1, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    e = src.edges
    keep = (local[e[:, 0]] >= 0) & (local[e[:, 1]] >= 0) if e.size else np.zeros(0, dtype=bool)
    edges = e[keep]
    adj = normalize_adjacency(local[edges], len(nodes))
    tags = split.tags(src.node_count)[nodes]
    return Snapshot(t, nodes, edges, adj, src.features[nodes], src.labels[nodes], tags, local)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def synth_growing_graph(n_classes, nodes_per_class, feature_dim, intra_p=0.05, inter_p=0.005,
                        class_sep=4.0, seed=0):
    """Class-conditional Gaussian features on a stochastic block model.

    Class means are orthonormal directions (random unit vectors when
    ``feature_dim < n_classes``) scaled by ``class_sep``; noise is unit
    variance. Node ``i`` belongs to class ``i // nodes_per_class``.
    """
    if n_classes < 1 or nodes_per_class < 1 or feature_dim < 1:
        raise ValueError("n_classes, nodes_per_class and feature_dim must be >= 1")
    for name, p in (("intra_p", intra_p), ("inter_p", inter_p)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    if class_sep < 0:
        raise ValueError("class_sep must be >= 0")
    rng = np.random.default_rng(seed)
    if feature_dim >= n_classes:
        q, _ = np.linalg.qr(rng.standard_normal((feature_dim, n_classes)))
        dirs = q.T
    else:
        dirs = rng.standard_normal((n_classes, feature_dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), nodes_per_class)
    features = dirs[labels] * class_sep + rng.standard_normal((len(labels), feature_dim))

    edges = []
    for a in range(n_classes):
        for b in range(a, n_classes):
            p = intra_p if a == b else inter_p
            draw = rng.random((nodes_per_class, nodes_per_class)) < p
            if a == b:
                draw = np.triu(draw, k=1)
            u, v = np.nonzero(draw)
            edges.append(np.stack([u + a * nodes_per_class, v + b * nodes_per_class], axis=1))
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    return GrowingGraphSource(features, labels, edges)
