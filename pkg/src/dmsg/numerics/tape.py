"""Reverse-mode differentiation on an explicit operation tape.

A :class:`Tape` records every node in creation order, which is a topological
order by construction, so the backward pass is a single reversed sweep.
All values are 2-D float64 arrays; scalars are ``(1, 1)``.
"""

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class Node:
    __slots__ = ("tape", "index", "value", "parents", "backward", "grad", "requires_grad", "name", "op")

    def __init__(self, tape, index, value, parents, backward, requires_grad, name=None, op="leaf"):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.backward = backward
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} {self.op} {self.shape}>"

    # operator sugar; the op functions live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class Tape:
    """Single-writer record of one forward computation."""

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def _push(self, value, parents, backward, requires_grad, name=None, op="leaf"):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by {op!r}")
        node = Node(self, len(self.nodes), value, parents, backward, requires_grad, name, op)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None):
        """Differentiable input (a parameter)."""
        return self._push(np.array(value, dtype=np.float64), (), None, True, name)

    def constant(self, value, name=None):
        return self._push(value, (), None, False, name, op="const")

    def lift(self, x):
        if isinstance(x, Node):
            if x.tape is not self:
                raise ValueError("node belongs to a different tape")
            return x
        return self.constant(x)

    def record(self, value, parents, backward, op):
        for p in parents:
            assert p.tape is self and p.index < len(self.nodes)
        requires_grad = any(p.requires_grad for p in parents)
        return self._push(value, tuple(parents), backward if requires_grad else None, requires_grad, op=op)


def grad(loss, wrt=None):
    """Back-propagate from scalar ``loss``.

    Populates ``.grad`` on every node reachable backwards from ``loss`` and
    returns the gradients of ``wrt`` (a list of leaves) or, when ``wrt`` is
    None, a dict mapping every leaf on the tape to its gradient.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    tape = loss.tape
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(tape.nodes[:loss.index + 1]):
        if node.grad is None or node.backward is None:
            continue
        contribs = node.backward(node.grad)
        for parent, g in zip(node.parents, contribs):
            if g is None or not parent.requires_grad:
                continue
            if tape.check_finite and not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite adjoint flowing out of {node.op!r}")
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64).reshape(parent.shape)
            else:
                parent.grad = parent.grad + g
    leaves = [n for n in tape.nodes if n.requires_grad and n.op == "leaf"]
    if wrt is None:
        return {n: (n.grad if n.grad is not None else np.zeros(n.shape)) for n in leaves}
    return [n.grad if n.grad is not None else np.zeros(n.shape) for n in wrt]


def gradient_check(f, params, eps=1e-5, value_fn=None):
    """Largest elementwise relative error between tape and central differences.

    ``f(tape, leaves)`` builds a scalar loss node from leaves wrapping
    ``params``. ``value_fn(params)`` gives the scalar whose finite differences
    are compared; it defaults to the value of ``f``. The error of one entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]

    def evaluate(ps):
        if value_fn is not None:
            v = float(value_fn(ps))
        else:
            t = Tape()
            v = f(t, [t.leaf(p) for p in ps]).item()
        if not np.isfinite(v):
            raise NonFiniteError("loss is not finite")
        return v

    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    analytic = grad(f(tape, leaves), leaves)

    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = evaluate(params)
            p[idx] = orig - eps
            down = evaluate(params)
            p[idx] = orig
            num = (up - down) / (2.0 * eps)
            a = analytic[k][idx]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
