"""Two-layer GCN encoder with an expandable linear classifier head."""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .numerics import ops
from .numerics.sparse import CSRMatrix
from .numerics.tape import Node, Tape

CHECKPOINT_VERSION = 1


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class _Params:
    """Dataclass of arrays (or tape nodes) with flat-dict helpers."""

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self)]

    def bind(self, tape, prefix=""):
        return type(self)(**{k: tape.leaf(v, name=prefix + k) for k, v in self.items()})

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass
class GcnParams(_Params):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def hidden(self):
        return self.W2.shape[1]


@dataclass
class ClassifierHead(_Params):
    W: np.ndarray
    b: np.ndarray

    @property
    def num_outputs(self):
        return self.W.shape[1]


def init_gcn(feature_dim, hidden, seed):
    rng = np.random.default_rng(seed)
    return GcnParams(glorot(rng, feature_dim, hidden), np.zeros((1, hidden)),
                     glorot(rng, hidden, hidden), np.zeros((1, hidden)))


def empty_head(hidden):
    return ClassifierHead(np.zeros((hidden, 0)), np.zeros((1, 0)))


def _is_tape_params(p):
    return any(isinstance(v, Node) for _, v in p.items())


def encode(adj: CSRMatrix, params: GcnParams, features, dropout=0.0, rng=None):
    """Z = A relu(A X W1 + b1) W2 + b2.

    With tape-bound params (nodes) returns a node; with plain arrays returns
    an array. ``dropout`` (inverted, on the hidden layer) needs ``rng``.
    """
    if not _is_tape_params(params):
        tape = Tape()
        return encode(adj, params.bind(tape), features, dropout, rng).value
    tape = params.W1.tape
    X = features if isinstance(features, Node) else tape.constant(features)
    if X.shape[0] != adj.shape[0] or X.shape[1] != params.W1.shape[0]:
        raise ValueError(f"feature matrix {X.shape} does not match adjacency {adj.shape} / W1 {params.W1.shape}")
    h = ops.relu(ops.add(ops.spmm(adj, ops.matmul(X, params.W1)), params.b1))
    if dropout > 0:
        keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
        h = ops.mul(h, keep)
    return ops.add(ops.spmm(adj, ops.matmul(h, params.W2)), params.b2)


def classify(Z, head: ClassifierHead):
    """Return ``(logits, probabilities)``; logits is a node iff the inputs are."""
    if isinstance(Z, Node) or _is_tape_params(head):
        tape = Z.tape if isinstance(Z, Node) else head.W.tape
        Zn = tape.lift(Z)
        if Zn.shape[1] != head.W.shape[0]:
            raise ValueError(f"embedding width {Zn.shape[1]} != head input {head.W.shape[0]}")
        logits = ops.add(ops.matmul(Zn, tape.lift(head.W)), tape.lift(head.b))
        return logits, ops._softmax(logits.value)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[1] != head.W.shape[0]:
        raise ValueError(f"embedding width {Z.shape[1]} != head input {head.W.shape[0]}")
    logits = Z @ head.W + head.b
    return logits, ops._softmax(logits)


def extend_head(head: ClassifierHead, n_new, init_scale, seed):
    """Append ``n_new`` output columns; existing columns are copied bit-for-bit."""
    if n_new < 1:
        raise ValueError("n_new must be >= 1")
    rng = np.random.default_rng(seed)
    new_W = rng.uniform(-init_scale, init_scale, size=(head.W.shape[0], n_new)) if init_scale > 0 \
        else np.zeros((head.W.shape[0], n_new))
    return ClassifierHead(np.concatenate([head.W, new_W], axis=1),
                          np.concatenate([head.b, np.zeros((1, n_new))], axis=1))


# ---------------------------------------------------------------------------
# checkpoints: a .npz archive of "<group>.<field>" -> matrix plus a version key
# ---------------------------------------------------------------------------

def save_checkpoint(path, groups, meta=None):
    arrays = {"__version__": np.array([CHECKPOINT_VERSION])}
    for gname, params in groups.items():
        for k, v in params.items():
            arrays[f"{gname}.{k}"] = np.asarray(v)
    if meta:
        for k, v in meta.items():
            arrays[f"__meta__.{k}"] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``{group: {field: array}}`` and the meta dict."""
    with np.load(path) as z:
        version = int(z["__version__"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        groups, meta = {}, {}
        for key in z.files:
            if key == "__version__":
                continue
            g, f = key.split(".", 1)
            if g == "__meta__":
                meta[f] = z[key]
            else:
                groups.setdefault(g, {})[f] = z[key]
    return groups, meta
