import copy
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def clone(self):
        return copy.deepcopy(self)


def _check(params, grads):
    for k, p in params.items():
        if k not in grads:
            raise KeyError(f"no gradient for parameter {k!r}")
        if grads[k].shape != p.shape:
            raise ValueError(f"gradient shape {grads[k].shape} != parameter shape {p.shape} for {k!r}")


def adam_step(params, grads, state):
    """Bias-corrected adaptive-moment update with decoupled weight decay.

    ``params`` and ``grads`` are dicts of arrays keyed by name. Returns new
    parameter arrays; ``state`` is advanced in place and also returned.
    """
    _check(params, grads)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None or m.shape != p.shape:
            m, v = np.zeros_like(p), np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[k], state.v[k] = m, v
        upd = (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[k] = p - state.lr * upd - state.lr * state.weight_decay * p
    return out, state


def sgd_step(params, grads, state):
    """Plain gradient descent with L2 weight decay folded into the gradient."""
    _check(params, grads)
    state.step += 1
    out = {k: p - state.lr * (grads[k] + state.weight_decay * p) for k, p in params.items()}
    return out, state
