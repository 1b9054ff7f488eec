"""Task-sequence training, evaluation and run outputs."""

import csv
import dataclasses
import io
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graph as G
from .buffer import MemoryBuffers, buffer_w2_diagnostic, buffers_json, greedy_select
from .config import TrainConfig
from .model import (ClassifierHead, GcnParams, classify, empty_head, encode, extend_head,
                    init_gcn, save_checkpoint)
from .numerics import ops
from .numerics.optim import OptimizerState, adam_step, sgd_step
from .numerics.tape import NonFiniteError, Tape, grad
from .replay import (DiscriminatorParams, VariationalParams, build_label_graph, cgse_loss,
                     init_discriminator, init_variational, mise_loss, rp_loss, variational_sample)

log = logging.getLogger(__name__)

# rng stream tags, combined with the run seed
_GCN, _VAR, _DISC, _HEAD, _NOISE, _BATCH, _DROPOUT = range(7)


class TrainingDivergence(RuntimeError):
    """A loss or gradient became non-finite."""


@dataclass
class ModelState:
    gcn: GcnParams
    head: ClassifierHead
    var: VariationalParams
    disc: DiscriminatorParams

    GROUPS = ("gcn", "head", "var", "disc")

    @classmethod
    def init(cls, feature_dim, hidden, seed):
        return cls(init_gcn(feature_dim, hidden, [seed, _GCN]), empty_head(hidden),
                   init_variational(hidden, [seed, _VAR]), init_discriminator(hidden, [seed, _DISC]))

    def flat(self, groups=GROUPS):
        return {f"{g}.{k}": v for g in groups for k, v in getattr(self, g).items()}

    def with_flat(self, flat):
        kw = {}
        for g in self.GROUPS:
            p = getattr(self, g)
            kw[g] = p.replace(**{k: flat.get(f"{g}.{k}", v) for k, v in p.items()})
        return ModelState(**kw)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def bind(self, tape):
        return ModelState(**{g: getattr(self, g).bind(tape, prefix=g + ".") for g in self.GROUPS})


@dataclass
class ExperimentResult:
    acc: np.ndarray                       # T x T, NaN above the diagonal
    aa: float
    af: float                             # None when T < 2
    task_times: list
    w2: dict = field(default_factory=dict)        # task -> {class: W2^2}
    buffers: list = field(default_factory=list)   # [(task, MemoryBuffers)]
    config: TrainConfig = None
    state: ModelState = None


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def aa_af(M):
    """Average accuracy of the final row and average forgetting against the diagonal."""
    rows = [np.asarray(r, dtype=np.float64) for r in M]
    T = len(rows)
    if T == 0 or any(len(rows[i]) < i + 1 for i in range(T)):
        raise ValueError("accuracy matrix must be complete lower-triangular")
    last = rows[-1][:T]
    aa = float(last.mean())
    if T < 2:
        return aa, None
    af = float(np.mean([last[i] - rows[i][i] for i in range(T - 1)]))
    return aa, af


def batch_sizes(n_new, n_buffer, b_new, b_buffer=0):
    """Mini-batch sizes whose ratio follows new-task vs buffer node counts."""
    if b_new <= 0:
        return n_new, n_buffer
    if b_buffer <= 0 and n_buffer > 0:
        b_buffer = max(1, int(round(b_new * n_buffer / max(n_new, 1))))
    return b_new, min(b_buffer, n_buffer)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    adj: object
    features: np.ndarray
    new_idx: np.ndarray          # local rows of new-task training nodes
    new_targets: np.ndarray      # head columns
    buf_idx: np.ndarray = None   # local rows of buffer nodes (None: no replay)
    buf_targets: np.ndarray = None
    buf_frozen: np.ndarray = None  # fixed buffer embeddings, bypassing the encoder


def objective(bound: ModelState, batch: Batch, cfg: TrainConfig, noise=None, rng=None):
    """Build the per-step loss on ``bound``'s tape.

    Returns a dict of nodes: ``new`` plus, when replay applies, ``rp``,
    ``mise`` and ``cgse``; ``total`` is the quantity to minimise,
    ``w_new*new + l_rp*rp - l_mise*mise + l_cgse*cgse``. The adversarial
    term enters with a minus sign because ``mise`` is the discriminator's
    log-likelihood and the reversal marker inside it already flips the
    generator side.
    """
    tape = bound.gcn.W1.tape
    drop_rng = rng if cfg.dropout > 0 else None
    Z = encode(batch.adj, bound.gcn, batch.features, cfg.dropout, drop_rng)
    logits, _ = classify(ops.gather_rows(Z, batch.new_idx), bound.head)
    new, _ = ops.softmax_cross_entropy(logits, batch.new_targets)
    parts = {"new": new}
    total = ops.scale(new, cfg.w_new)
    if batch.buf_idx is not None and len(batch.buf_idx) > 0:
        Z_buf = tape.constant(batch.buf_frozen) if batch.buf_frozen is not None \
            else ops.gather_rows(Z, batch.buf_idx)
        if noise is None:
            noise = np.zeros(Z_buf.shape)
        Z_hat, mu, sigma = variational_sample(Z_buf, bound.var, noise)
        parts["rp"] = rp_loss(Z_hat, batch.buf_targets, bound.head)
        parts["mise"] = mise_loss(Z_buf, Z_hat, bound.disc)
        total = ops.add(total, ops.scale(parts["rp"], cfg.lambda_rp))
        total = ops.add(total, ops.scale(parts["mise"], -cfg.lambda_mise))
        if len(batch.buf_idx) >= 2:
            A = build_label_graph(batch.buf_targets)
            parts["cgse"] = cgse_loss(Z_hat, A, mu, sigma, max_pairs=cfg.max_pairs or None, rng=rng)
            total = ops.add(total, ops.scale(parts["cgse"], cfg.lambda_cgse))
    parts["total"] = total
    return parts


# ---------------------------------------------------------------------------
# sampling for mini-batch mode
# ---------------------------------------------------------------------------

def receptive_field(adj, seeds, hops=2, fanout=0, rng=None):
    """Sorted local ids reachable from ``seeds`` in ``hops`` steps."""
    field_ = set(int(s) for s in seeds)
    frontier = np.unique(np.asarray(seeds, dtype=np.int64))
    for _ in range(hops):
        nxt = []
        for u in frontier:
            nbrs = adj.indices[adj.indptr[u]:adj.indptr[u + 1]]
            if fanout and nbrs.size > fanout:
                nbrs = np.sort(rng.choice(nbrs, size=fanout, replace=False))
            nxt.append(nbrs)
        frontier = np.unique(np.concatenate(nxt)) if nxt else frontier[:0]
        frontier = frontier[~np.isin(frontier, list(field_))]
        field_.update(frontier.tolist())
    return np.array(sorted(field_), dtype=np.int64)


def _make_batches(snap, new_idx, new_targets, buf_idx, buf_targets, cfg, rng, frozen=None):
    if cfg.batch_new <= 0:
        return [Batch(snap.adj, snap.features, new_idx, new_targets, buf_idx, buf_targets, frozen)]
    n_buf = 0 if buf_idx is None else len(buf_idx)
    b_new, b_buf = batch_sizes(len(new_idx), n_buf, cfg.batch_new, cfg.batch_buffer)
    order = rng.permutation(len(new_idx))
    border = rng.permutation(n_buf) if n_buf else None
    out = []
    for k, s in enumerate(range(0, len(new_idx), b_new)):
        sel = order[s:s + b_new]
        bsel = None
        if n_buf:
            start = (k * b_buf) % n_buf
            bsel = np.take(border, np.arange(start, start + b_buf), mode="wrap")
        seeds = new_idx[sel] if bsel is None or frozen is not None else \
            np.concatenate([new_idx[sel], buf_idx[bsel]])
        keep = receptive_field(snap.adj, seeds, 2, cfg.fanout, rng)
        pos = {int(v): i for i, v in enumerate(keep)}
        remap = np.vectorize(pos.__getitem__, otypes=[np.int64])
        out.append(Batch(snap.adj.submatrix(keep), snap.features[keep], remap(new_idx[sel]), new_targets[sel],
                         None if bsel is None else (remap(buf_idx[bsel]) if frozen is None else bsel),
                         None if bsel is None else buf_targets[bsel],
                         None if bsel is None or frozen is None else frozen[bsel]))
    return out


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------

def _columns(seq, t):
    return {int(c): i for i, c in enumerate(seq.classes_upto(t))}


def train_task(state, snap, t, seq, buffers, cfg, rngs, frozen_buffer_emb=None):
    """Optimise one task; returns the updated ModelState."""
    cols = _columns(seq, t)
    if state.head.num_outputs != len(cols):
        raise ValueError("head must be extended to cover the task's classes before training")
    new_classes = seq.classes_upto(t) if cfg.mode == "joint" else seq.tasks[t - 1]
    new_idx = snap.select(new_classes, G.TRAIN)
    new_targets = np.array([cols[int(c)] for c in snap.labels[new_idx]], dtype=np.int64)

    buf_idx = buf_targets = frozen = None
    if cfg.mode == "dmsg" and t > 1:
        old = set(int(c) for c in seq.classes_upto(t - 1))
        kept = MemoryBuffers(buffers.capacity, {c: v for c, v in buffers.buffers.items() if c in old})
        ids, labels = kept.nodes_and_labels()
        if ids.size == 0:
            raise ValueError(f"task {t}: dmsg mode needs non-empty buffers of earlier classes")
        buf_idx = snap.local[ids]
        buf_targets = np.array([cols[int(c)] for c in labels], dtype=np.int64)
        if cfg.freeze_buffer_embeddings and frozen_buffer_emb is not None:
            frozen = np.stack([frozen_buffer_emb[int(v)] for v in ids])
    replay = buf_idx is not None
    groups = ModelState.GROUPS if replay else ("gcn", "head")

    opt = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    step = adam_step if cfg.optimizer == "adam" else sgd_step
    for epoch in range(cfg.epochs):
        for batch in _make_batches(snap, new_idx, new_targets, buf_idx, buf_targets, cfg, rngs["batch"], frozen):
            noise = rngs["noise"].standard_normal((len(batch.buf_idx), state.gcn.hidden)) if replay else None
            tape = Tape()
            bound = state.bind(tape)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    parts = objective(bound, batch, cfg, noise, rngs["dropout"])
                    grads = grad(parts["total"])
            except NonFiniteError as exc:
                raise TrainingDivergence(f"task {t}, epoch {epoch}, mode {cfg.mode}: {exc}") from exc
            g = {f"{grp}.{k}": grads[node] for grp in groups for k, node in getattr(bound, grp).items()}
            new_params, opt = step(state.flat(groups), g, opt)
            if not all(np.all(np.isfinite(v)) for v in new_params.values()):
                raise TrainingDivergence(f"task {t}, epoch {epoch}: parameters became non-finite")
            state = state.with_flat(new_params)
        if log.isEnabledFor(logging.DEBUG) and (epoch % 50 == 0 or epoch == cfg.epochs - 1):
            log.debug("task %d epoch %d %s", t, epoch, {k: round(v.item(), 5) for k, v in parts.items()})
    return state


def accuracy_row(pred, snap, seq, t):
    """Accuracy on each task 1..t's test nodes given predicted class ids for snapshot nodes."""
    pred = np.asarray(pred)
    row = []
    for j in range(1, t + 1):
        idx = snap.select(seq.tasks[j - 1], G.TEST)
        if idx.size == 0:
            raise ValueError(f"task {j} has no test nodes")
        row.append(float(np.mean(pred[idx] == snap.labels[idx])))
    return row


def predict(state, snap, seq, t):
    Z = encode(snap.adj, state.gcn, snap.features)
    _, probs = classify(Z, state.head)
    classes = seq.classes_upto(t)
    return classes[np.argmax(probs, axis=1)], probs, Z


def evaluate(state, snap, seq, t):
    pred, _, _ = predict(state, snap, seq, t)
    return accuracy_row(pred, snap, seq, t)


def _select(state, snap, seq, t, buffers, cfg, width_t):
    """Greedy buffer selection for task t's classes using the current model."""
    _, probs, _ = predict(state, snap, seq, width_t)
    P = np.zeros((len(snap.local), probs.shape[1]))
    P[snap.nodes] = probs
    cand = {int(c): snap.nodes[snap.select([c], G.TRAIN)] for c in seq.tasks[t - 1]}
    return greedy_select(buffers, cand, P, cfg.buffer_size, _columns(seq, width_t))


def run_sequence(cfg: TrainConfig, src, checkpoint_dir=None):
    if cfg.class_order is not None:
        src = G.GrowingGraphSource(src.features, src.labels, src.edges, cfg.class_order)
    seq = G.partition_tasks(src, cfg.classes_per_task)
    split = G.make_split(seq, cfg.split_ratios, cfg.effective_split_seed)
    T = len(seq)
    rngs = {"noise": np.random.default_rng([cfg.seed, _NOISE]),
            "batch": np.random.default_rng([cfg.seed, _BATCH]),
            "dropout": np.random.default_rng([cfg.seed, _DROPOUT])}
    state = ModelState.init(src.feature_dim, cfg.hidden, cfg.seed)
    buffers = MemoryBuffers(cfg.buffer_size)
    acc = np.full((T, T), np.nan)
    times, w2, history = [], {}, []
    frozen = {}

    for t in range(1, T + 1):
        t0 = time.perf_counter()
        snap = G.snapshot_at(src, seq, t, split=split)
        if cfg.mode == "joint" and t > 1:
            # joint retrains from scratch on the accumulated tasks
            fresh = ModelState.init(src.feature_dim, cfg.hidden, cfg.seed)
            state = fresh.replace(head=extend_head(fresh.head, len(seq.classes_upto(t)), cfg.head_init_scale,
                                                   [cfg.seed, _HEAD, t]))
        else:
            state.head = extend_head(state.head, len(seq.tasks[t - 1]), cfg.head_init_scale, [cfg.seed, _HEAD, t])
        if cfg.mode == "dmsg" and cfg.select_before_training:
            buffers = _select(state, snap, seq, t, buffers, cfg, t)
        state = train_task(state, snap, t, seq, buffers, cfg, rngs, frozen)
        if cfg.mode == "dmsg" and not cfg.select_before_training:
            buffers = _select(state, snap, seq, t, buffers, cfg, t)
        times.append(time.perf_counter() - t0)

        pred, _, Z = predict(state, snap, seq, t)
        acc[t - 1, :t] = accuracy_row(pred, snap, seq, t)
        if cfg.mode == "dmsg":
            history.append((t, buffers.copy()))
            for c in seq.tasks[t - 1]:
                for v in buffers.buffers[int(c)]:
                    frozen[int(v)] = Z[snap.local[v]]
            w2[t] = _w2_report(Z, snap, buffers)
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"task{t:03d}.npz",
                            {g: getattr(state, g) for g in ModelState.GROUPS}, {"task": t})
        log.info("task %d/%d done in %.2fs: %s", t, T, times[-1], np.round(acc[t - 1, :t], 4).tolist())

    aa, af = aa_af([acc[i, :i + 1] for i in range(T)])
    return ExperimentResult(acc, aa, af, times, w2, history, cfg, state)


def _w2_report(Z, snap, buffers):
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for c, ids in sorted(buffers.buffers.items()):
            cls = snap.select([c], G.TRAIN)
            out[int(c)] = buffer_w2_diagnostic(Z[cls], Z[snap.local[np.asarray(ids)]])
    return out


# ---------------------------------------------------------------------------
# run outputs
# ---------------------------------------------------------------------------

def accuracy_matrix_csv(acc):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for t in range(acc.shape[0]):
        w.writerow([repr(float(x)) for x in acc[t, :t + 1]])
    return buf.getvalue()


def read_accuracy_matrix(path):
    with open(path, encoding="utf-8") as fh:
        rows = [[float(x) for x in r] for r in csv.reader(fh) if r]
    return rows


def save_result(result: ExperimentResult, run_dir):
    d = Path(run_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "accuracy_matrix.csv").write_text(accuracy_matrix_csv(result.acc), encoding="utf-8")
    metrics = {
        "mode": result.config.mode,
        "seed": result.config.seed,
        "AA": result.aa,
        "AF": result.af,
        "per_task_times": result.task_times,
        "w2_diagnostics": {str(t): {str(c): v for c, v in d_.items()} for t, d_ in result.w2.items()},
    }
    (d / "metrics.json").write_text(json.dumps(metrics, indent=1), encoding="utf-8")
    (d / "buffers.json").write_text(buffers_json(result.buffers), encoding="utf-8")
    return d
