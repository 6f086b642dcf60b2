"""Reverse-mode automatic differentiation over dense float64 arrays.

Every pullback is written in terms of the same differentiable primitives
used by the forward pass.  With ``create_graph=True`` the backward pass is
itself recorded on the tape, so gradients of gradients are available.  This
is what makes the Jacobian penalties trainable.

Tensors are plain ``numpy.ndarray`` values of dtype float64.
"""

from __future__ import annotations

import heapq
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class AutodiffError(ValueError):
    pass


def as_tensor(data) -> np.ndarray:
    """Validate external input: float64, finite."""
    t = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise AutodiffError("non-finite value in tensor input")
    return t


@dataclass
class Node:
    op: str
    parents: tuple
    # saved forward callable; replay() uses it to recompute the value
    fwd: Optional[Callable]
    # maps the output cotangent (a Var) to one cotangent Var (or None) per parent
    vjp: Optional[Callable]
    value: np.ndarray
    requires_grad: bool


class Tape:
    """Append-only record of operations.

    Parents of node ``k`` always have indices below ``k``.  Outside of
    recording mode (used by a first-order backward pass) ops compute values
    only and return detached Vars.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._recording = True

    def __len__(self):
        return len(self.nodes)

    @contextmanager
    def no_record(self):
        prev = self._recording
        self._recording = False
        try:
            yield
        finally:
            self._recording = prev

    def leaf(self, t, requires_grad: bool = False) -> "Var":
        return leaf(t, requires_grad, tape=self)

    def const(self, t) -> "Var":
        """Internal constant; skips the finiteness scan of ``leaf``."""
        t = np.asarray(t, dtype=np.float64)
        if not self._recording:
            return Var(self, None, t, False)
        return self._append("leaf", (), None, None, t, False)

    def _append(self, op, parents, fwd, vjp, value, requires_grad) -> "Var":
        idx = len(self.nodes)
        self.nodes.append(Node(op, parents, fwd, vjp, value, requires_grad))
        return Var(self, idx, value, requires_grad)

    def replay(self) -> list[np.ndarray]:
        """Recompute every node value from the leaves, in tape order."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.fwd is None:
                values.append(node.value)
            else:
                values.append(node.fwd(*(values[p] for p in node.parents)))
        return values


class Var:
    __slots__ = ("tape", "node_id", "value", "requires_grad")
    __array_priority__ = 100

    def __init__(self, tape: Tape, node_id: Optional[int], value: np.ndarray, requires_grad: bool):
        self.tape = tape
        self.node_id = node_id
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.node_id}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(self, other))

    def __radd__(self, other):
        return add(_lift(self, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self, other))

    def __rsub__(self, other):
        return sub(_lift(self, other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(self, other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(self, other))

    @property
    def T(self):
        return transpose(self)


def _lift(ref: Var, x) -> Var:
    if isinstance(x, Var):
        return x
    return ref.tape.const(np.asarray(x, dtype=np.float64))


def leaf(t, requires_grad: bool = False, tape: Optional[Tape] = None) -> Var:
    """Create a parentless node holding ``t``.  Rejects NaN/Inf."""
    t = as_tensor(t)
    if tape is None:
        tape = Tape()
    with _recording(tape):
        return tape._append("leaf", (), None, None, t, requires_grad)


@contextmanager
def _recording(tape):
    prev = tape._recording
    tape._recording = True
    try:
        yield
    finally:
        tape._recording = prev


def _tape_of(*vs: Var) -> Tape:
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise AutodiffError("operands live on different tapes")
    return tape


def _op(name: str, inputs: Sequence[Var], value: np.ndarray, fwd: Callable, vjp: Callable) -> Var:
    tape = _tape_of(*inputs)
    rg = any(v.requires_grad for v in inputs)
    if not tape._recording:
        return Var(tape, None, value, False)
    return tape._append(name, tuple(v.node_id for v in inputs), fwd, vjp if rg else None, value, rg)


# ---------------------------------------------------------------------------
# primitives


def _check_same_shape(name, a: Var, b: Var):
    if a.shape != b.shape:
        # broadcasting only along leading axes (bias rows) is supported
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise AutodiffError(f"{name}: shape mismatch {a.shape} vs {b.shape}") from None


def add(a: Var, b: Var) -> Var:
    _check_same_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return sum_to(g, sa), sum_to(g, sb)

    return _op("add", (a, b), a.value + b.value, np.add, vjp)


def sub(a: Var, b: Var) -> Var:
    _check_same_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return sum_to(g, sa), scale(sum_to(g, sb), -1.0)

    return _op("sub", (a, b), a.value - b.value, np.subtract, vjp)


def mul(a: Var, b: Var) -> Var:
    """Elementwise product."""
    _check_same_shape("mul", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return sum_to(mul(g, b), sa), sum_to(mul(g, a), sb)

    return _op("mul", (a, b), a.value * b.value, np.multiply, vjp)


def matmul(a: Var, b: Var) -> Var:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def vjp(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _op("matmul", (a, b), a.value @ b.value, np.matmul, vjp)


def transpose(a: Var) -> Var:
    return _op("transpose", (a,), a.value.T, np.transpose, lambda g: (transpose(g),))


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return _op("scale", (a,), a.value * c, lambda x: x * c, lambda g: (scale(g, c),))


def relu(a: Var) -> Var:
    mask = (a.value > 0).astype(np.float64)

    def vjp(g):
        # relu'' == 0: the mask enters as a constant
        return (mul(g, g.tape.const(mask)),)

    return _op("relu", (a,), a.value * mask, lambda x: np.maximum(x, 0.0), vjp)


def tanh(a: Var) -> Var:
    def vjp(g):
        return (mul(g, sub(g.tape.const(np.ones_like(out.value)), square(out))),)

    out = _op("tanh", (a,), np.tanh(a.value), np.tanh, vjp)
    return out


def square(a: Var) -> Var:
    return _op("square", (a,), a.value * a.value, np.square, lambda g: (scale(mul(g, a), 2.0),))


def abs(a: Var) -> Var:  # noqa: A001 - mirrors the primitive name
    # subgradient at 0 is 0 (np.sign(0) == 0)
    sgn = np.sign(a.value)
    return _op("abs", (a,), np.abs(a.value), np.abs, lambda g: (mul(g, g.tape.const(sgn)),))


def sum(a: Var, axis: Optional[int] = None) -> Var:  # noqa: A001
    shape = a.shape
    if axis is None:
        return _op("sum", (a,), np.asarray(a.value.sum()), lambda x: np.asarray(x.sum()),
                   lambda g: (broadcast_to(g, shape),))
    kept = list(shape)
    kept[axis] = 1
    kept = tuple(kept)

    def vjp(g):
        return (broadcast_to(reshape(g, kept), shape),)

    return _op("sum", (a,), a.value.sum(axis=axis), lambda x: x.sum(axis=axis), vjp)


def mean(a: Var) -> Var:
    return scale(sum(a), 1.0 / a.value.size)


def reshape(a: Var, shape) -> Var:
    shape = tuple(shape)
    old = a.shape
    return _op("reshape", (a,), a.value.reshape(shape), lambda x: x.reshape(shape),
               lambda g: (reshape(g, old),))


def broadcast_to(a: Var, shape) -> Var:
    shape = tuple(shape)
    old = a.shape
    return _op("broadcast_to", (a,), np.broadcast_to(a.value, shape).copy(),
               lambda x: np.broadcast_to(x, shape).copy(), lambda g: (sum_to(g, old),))


def sum_to(a: Var, shape) -> Var:
    """Sum out broadcast axes so the result has ``shape`` (inverse of broadcast_to)."""
    shape = tuple(shape)
    if a.shape == shape:
        return a
    old = a.shape

    def reduce(x):
        lead = x.ndim - len(shape)
        x = x.sum(axis=tuple(range(lead))) if lead else x
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and x.shape[i] != 1)
        return x.sum(axis=axes, keepdims=True) if axes else x

    return _op("sum_to", (a,), reduce(a.value), reduce, lambda g: (broadcast_to(g, old),))


def dropout(a: Var, rate: float, training: bool, seed) -> Var:
    """Inverted dropout.  Identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise AutodiffError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    rng = np.random.default_rng(seed)
    keep = (rng.random(a.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(a, a.tape.const(keep))


# ---------------------------------------------------------------------------
# backward


def backward(output: Var, wrt: Sequence[Var], create_graph: bool = False) -> list[Var]:
    """Gradients of scalar ``output`` with respect to each Var in ``wrt``.

    With ``create_graph`` the returned gradients are tape nodes and can be
    differentiated again.  Otherwise they are constant leaves.
    """
    if output.value.size != 1:
        raise AutodiffError(f"backward needs a scalar output, got shape {output.shape}")
    tape = output.tape
    for w in wrt:
        if w.tape is not tape:
            raise AutodiffError("wrt node belongs to a different tape")
        if w.node_id is None:
            raise AutodiffError("wrt node is detached from the tape")
    if output.node_id is None:
        raise AutodiffError("output is detached from the tape")

    nodes = tape.nodes
    ctx = _recording(tape) if create_graph else tape.no_record()
    grads: dict[int, Var] = {}
    results = []
    with ctx:
        grads[output.node_id] = tape.const(np.ones_like(output.value))
        # parents always have smaller ids, so popping the largest pending id
        # visits only ancestors of the output, in reverse topological order
        pending = [-output.node_id]
        while pending:
            k = -heapq.heappop(pending)
            node = nodes[k]
            if node.vjp is None:
                continue
            contribs = node.vjp(grads[k])
            for p, c in zip(node.parents, contribs):
                if c is None or not nodes[p].requires_grad:
                    continue
                prev = grads.get(p)
                if prev is None:
                    grads[p] = c
                    heapq.heappush(pending, -p)
                else:
                    grads[p] = add(prev, c)
        for w in wrt:
            g = grads.get(w.node_id)
            if g is None:
                g = tape.const(np.zeros_like(w.value))
            results.append(g)
    if not create_graph:
        results = [tape.const(r.value) for r in results]
    return results


def grad(output: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Convenience: first-order gradients as plain arrays."""
    return [g.value for g in backward(output, wrt, create_graph=False)]


def finite_difference_jacobian(f: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``; shape ``f(x).shape + x.shape``."""
    if h <= 0:
        raise AutodiffError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    fx = np.asarray(f(x), dtype=np.float64)
    jac = np.empty(fx.shape + x.shape)
    flat = x.reshape(-1)
    jflat = jac.reshape(fx.shape + (flat.size,))
    for k in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[k] += h
        xm[k] -= h
        fp = np.asarray(f(xp.reshape(x.shape)), dtype=np.float64)
        fm = np.asarray(f(xm.reshape(x.shape)), dtype=np.float64)
        jflat[..., k] = (fp - fm) / (2.0 * h)
    return jac
