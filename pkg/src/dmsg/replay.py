"""Generative replay losses on buffer-node embeddings.

Buffered embeddings are perturbed by a variational layer (identity mean,
relu-linear scale) and the perturbed copies are used for replay. Three
losses shape them: an adversarial term against a small discriminator, a
label-graph reconstruction term with a KL prior, and plain cross-entropy
replay through the classifier head.

All loss functions take tape nodes. Passing plain arrays evaluates them on
a throwaway tape and returns floats / arrays.
"""

from dataclasses import dataclass

import numpy as np

from .model import ClassifierHead, _Params, classify, glorot
from .numerics import ops
from .numerics.tape import Node, Tape

SIGMA2_FLOOR = 1e-6
D_CLAMP = 1e-7


@dataclass
class VariationalParams(_Params):
    W: np.ndarray      # h x h
    b: np.ndarray      # 1 x h


@dataclass
class DiscriminatorParams(_Params):
    W1: np.ndarray     # h x h/2
    b1: np.ndarray
    W2: np.ndarray     # h/2 x 1
    b2: np.ndarray


def init_variational(hidden, seed):
    rng = np.random.default_rng(seed)
    return VariationalParams(glorot(rng, hidden, hidden), np.zeros((1, hidden)))


def init_discriminator(hidden, seed):
    rng = np.random.default_rng(seed)
    mid = max(1, hidden // 2)
    return DiscriminatorParams(glorot(rng, hidden, mid), np.zeros((1, mid)),
                               glorot(rng, mid, 1), np.zeros((1, 1)))


def _tape_for(*objs):
    for o in objs:
        if isinstance(o, Node):
            return o.tape, False
        if isinstance(o, _Params):
            for _, v in o.items():
                if isinstance(v, Node):
                    return v.tape, False
    return Tape(), True


def _lift_params(p, tape):
    return type(p)(**{k: tape.lift(v) for k, v in p.items()})


def _out(node, eager):
    if not eager:
        return node
    return node.item() if node.shape == (1, 1) else node.value


def variational_sample(Z_buf, vp: VariationalParams, noise):
    """Return ``(Z_hat, mu, sigma)`` with mu = Z_buf, sigma = relu(Z_buf W + b).

    ``noise`` is a standard-normal array shaped like ``Z_buf`` or an integer
    seed used to draw one.
    """
    tape, eager = _tape_for(Z_buf, vp)
    Z = tape.lift(Z_buf)
    vp = _lift_params(vp, tape)
    if np.isscalar(noise):
        noise = np.random.default_rng(int(noise)).standard_normal(Z.shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != Z.shape:
        raise ValueError(f"noise shape {noise.shape} != embedding shape {Z.shape}")
    sigma = ops.relu(ops.add(ops.matmul(Z, vp.W), vp.b))
    Z_hat = ops.add(Z, ops.mul(sigma, noise))
    if eager:
        return Z_hat.value, Z.value, sigma.value
    return Z_hat, Z, sigma


def discriminate(x, dp: DiscriminatorParams):
    """D(x): probability that each row is an original embedding."""
    h = ops.relu(ops.add(ops.matmul(x, dp.W1), dp.b1))
    return ops.sigmoid(ops.add(ops.matmul(h, dp.W2), dp.b2))


def _ell_d(z, z_hat, dp):
    # per-row log D(z) + log(1 - D(z_hat)), clamped inside the logs
    d_real = discriminate(z, dp)
    d_fake = discriminate(z_hat, dp)
    return ops.add(ops.clamped_log(d_real, D_CLAMP, 1 - D_CLAMP),
                   ops.clamped_log(ops.sub(1.0, d_fake), D_CLAMP, 1 - D_CLAMP))


def disc_loss(z, z_hat, dp: DiscriminatorParams):
    """log D(z) + log(1 - D(z_hat)) for single rows (summed if several)."""
    tape, eager = _tape_for(z, z_hat, dp)
    z, z_hat = tape.lift(np.atleast_2d(z) if not isinstance(z, Node) else z), \
        tape.lift(np.atleast_2d(z_hat) if not isinstance(z_hat, Node) else z_hat)
    return _out(ops.total(_ell_d(z, z_hat, _lift_params(dp, tape))), eager)


def mise_loss(Z_buf, Z_hat, dp: DiscriminatorParams):
    """Mean discriminator objective over buffer rows.

    Both embedding inputs pass through a gradient-reversal marker before the
    discriminator, so minimising ``-mise_loss`` in one backward pass moves the
    discriminator up this objective and the encoder / variational layer down.
    """
    tape, eager = _tape_for(Z_buf, Z_hat, dp)
    Z, Zh = tape.lift(Z_buf), tape.lift(Z_hat)
    if Z.shape[0] != Zh.shape[0]:
        raise ValueError("original and generated row counts differ")
    ell = _ell_d(ops.reverse_grad(Z), ops.reverse_grad(Zh), _lift_params(dp, tape))
    return _out(ops.mean(ell), eager)


def build_label_graph(labels):
    """Dense 0/1 matrix linking distinct buffer nodes that share a label."""
    y = np.asarray(labels).reshape(-1)
    if y.size < 2:
        raise ValueError("label graph needs at least two nodes")
    A = (y[:, None] == y[None, :]).astype(np.float64)
    np.fill_diagonal(A, 0.0)
    return A


def kl_std_normal(mu, sigma):
    """Sum over rows of KL(N(mu, diag sigma^2) || N(0, I)); sigma^2 floored."""
    tape, eager = _tape_for(mu, sigma)
    mu, sigma = tape.lift(mu), tape.lift(sigma)
    if np.any(sigma.value < 0):
        raise ValueError("sigma must be non-negative")
    s2 = ops.square(sigma)
    floor = s2.value < SIGMA2_FLOOR
    if np.any(floor):
        # floor without gradient below the threshold
        s2 = ops.add(ops.mul(s2, (~floor).astype(np.float64)), floor * SIGMA2_FLOOR)
    n, h = mu.shape
    kl = ops.scale(ops.sub(ops.add(ops.total(s2), ops.total(ops.square(mu))),
                           ops.add(ops.total(ops.log(s2)), float(n * h))), 0.5)
    return _out(kl, eager)


def cgse_loss(Z_hat, label_graph, mu, sigma, max_pairs=None, rng=None):
    """Mean pairwise BCE reconstructing the label graph, plus the KL prior.

    Pairs are all unordered i < j; ``max_pairs`` draws a uniform subset. The
    KL term is averaged over nodes and embedding dimensions so that both
    terms are per-scalar means.
    """
    tape, eager = _tape_for(Z_hat, mu, sigma)
    Zh = tape.lift(Z_hat)
    A = np.asarray(label_graph, dtype=np.float64)
    n = Zh.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"label graph {A.shape} does not match {n} embeddings")
    iu, ju = np.triu_indices(n, k=1)
    if max_pairs is not None and iu.size > max_pairs:
        pick = np.sort((rng or np.random.default_rng(0)).choice(iu.size, size=max_pairs, replace=False))
        iu, ju = iu[pick], ju[pick]
    w = np.zeros((n, n))
    w[iu, ju] = 1.0 / iu.size
    logits = ops.matmul(Zh, ops.transpose(Zh))
    pair = ops.bce_with_logits(logits, A, w)
    kl = ops.scale(kl_std_normal(tape.lift(mu), tape.lift(sigma)), 1.0 / (n * Zh.shape[1]))
    return _out(ops.add(pair, kl), eager)


def rp_loss(Z_hat, targets, head: ClassifierHead):
    """Cross-entropy replay on generated embeddings; ``targets`` are head columns."""
    tape, eager = _tape_for(Z_hat, head)
    logits, _ = classify(tape.lift(Z_hat), _lift_params(head, tape))
    loss, _ = ops.softmax_cross_entropy(logits, targets)
    return _out(loss, eager)
