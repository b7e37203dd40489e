"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records operations in the order they are applied. Every node
is identified by an integer id; inputs of node ``i`` always have ids ``< i``,
so the backward pass is a single reverse sweep over the node list.

Shape rules (no general broadcasting):

========  =====================================================================
op        rule
========  =====================================================================
matmul    ``[m, k] @ [k, n] -> [m, n]``
add       same shapes, or ``[m, n] + [n]`` (row bias added to every row)
sub       same shapes
mul       same shapes (elementwise)
scale     any shape times a python float attribute ``c``
concat    ``[m, p] ++ [m, q] -> [m, p + q]`` along the last axis (1-D allowed)
silu      elementwise ``x * sigmoid(x)``
tanh      elementwise
sum       any shape -> scalar ``[]``
mean      any shape -> scalar ``[]``
sq_norm   any shape -> scalar, sum of squares
dot       same shapes -> scalar, sum of elementwise products
========  =====================================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's rule."""


def as_tensor(value) -> Tensor:
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite entries")
    return arr


def _sigmoid(x):
    # tanh form: overflow-free and faster than expit
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# Each rule returns (forward value, backward fn). The backward fn maps the
# upstream gradient and a per-input "needed" mask to one gradient per input
# (None where not needed).

def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, lambda g, need: (g @ b.T if need[0] else None, a.T @ g if need[1] else None)


def _add(a, b):
    if a.shape == b.shape:
        return a + b, lambda g, need: (g, g)
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return a + b, lambda g, need: (g, g.sum(axis=0) if need[1] else None)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def _sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return a - b, lambda g, need: (g, -g if need[1] else None)


def _mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return a * b, lambda g, need: (g * b if need[0] else None, g * a if need[1] else None)


def _scale(a, *, c):
    c = float(c)
    return c * a, lambda g, need: (c * g,)


def _concat(a, b):
    if a.ndim != b.ndim or a.ndim not in (1, 2) or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    p = a.shape[-1]
    return np.concatenate([a, b], axis=-1), lambda g, need: (g[..., :p], g[..., p:])


def _silu(a):
    s = _sigmoid(a)
    return a * s, lambda g, need: (g * (s * (1.0 + a * (1.0 - s))),)


def _tanh(a):
    y = np.tanh(a)
    return y, lambda g, need: (g * (1.0 - y * y),)


def _sum(a):
    return np.array(a.sum()), lambda g, need: (np.full(a.shape, float(g)),)


def _mean(a):
    n = a.size
    return np.array(a.sum() / n), lambda g, need: (np.full(a.shape, float(g) / n),)


def _sq_norm(a):
    return np.array(np.sum(a * a)), lambda g, need: (2.0 * float(g) * a,)


def _dot(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"dot: incompatible shapes {a.shape} and {b.shape}")
    return np.array(np.sum(a * b)), lambda g, need: (float(g) * b if need[0] else None, float(g) * a if need[1] else None)


OPS: dict[str, Callable] = {
    "matmul": _matmul,
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "scale": _scale,
    "concat": _concat,
    "silu": _silu,
    "tanh": _tanh,
    "sum": _sum,
    "mean": _mean,
    "sq_norm": _sq_norm,
    "dot": _dot,
}


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: Tensor
    requires_grad: bool
    backward_fn: Callable | None = field(default=None, repr=False)


class Tape:
    """Ordered record of operations; see the module docstring for shape rules."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, node: Node) -> int:
        if not np.all(np.isfinite(node.value)):
            raise FloatingPointError(f"{node.op}: non-finite forward value")
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, value, requires_grad: bool = True) -> int:
        """Record an input. Gradients are reported only for ``requires_grad`` leaves."""
        return self._push(Node("leaf", (), as_tensor(value), requires_grad))

    def const(self, value) -> int:
        return self.leaf(value, requires_grad=False)

    def detach(self, node_id: int) -> int:
        """New constant leaf carrying the value of ``node_id`` (a stop-gradient)."""
        return self.const(self.nodes[node_id].value)

    def value(self, node_id: int) -> Tensor:
        return self.nodes[node_id].value

    def requires_grad(self, node_id: int) -> bool:
        return self.nodes[node_id].requires_grad

    def apply(self, op: str, *inputs: int, **attrs) -> int:
        try:
            rule = OPS[op]
        except KeyError:
            raise ValueError(f"unknown op {op!r}") from None
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise IndexError(f"{op}: unknown node id {i}")
        values = [self.nodes[i].value for i in inputs]
        try:
            # overflow surfaces as a non-finite value, rejected in _push
            with np.errstate(over="ignore", invalid="ignore"):
                out, backward_fn = rule(*values, **attrs)
        except ShapeError:
            raise
        except TypeError as exc:
            raise ValueError(f"{op}: bad arguments ({exc})") from None
        requires = any(self.nodes[i].requires_grad for i in inputs)
        return self._push(Node(op, tuple(inputs), np.asarray(out, dtype=np.float64),
                               requires, backward_fn if requires else None))

    # convenience wrappers, one per op
    def matmul(self, a, b): return self.apply("matmul", a, b)
    def add(self, a, b): return self.apply("add", a, b)
    def sub(self, a, b): return self.apply("sub", a, b)
    def mul(self, a, b): return self.apply("mul", a, b)
    def scale(self, a, c): return self.apply("scale", a, c=c)
    def concat(self, a, b): return self.apply("concat", a, b)
    def silu(self, a): return self.apply("silu", a)
    def tanh(self, a): return self.apply("tanh", a)
    def sum(self, a): return self.apply("sum", a)
    def mean(self, a): return self.apply("mean", a)
    def sq_norm(self, a): return self.apply("sq_norm", a)
    def dot(self, a, b): return self.apply("dot", a, b)

    def backward(self, loss: int) -> dict[int, Tensor]:
        """Gradients of scalar node ``loss`` with respect to every grad-requiring leaf."""
        if self.nodes[loss].value.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {self.nodes[loss].value.shape}")
        grads: dict[int, Tensor] = {loss: np.array(1.0)}
        for i in range(loss, -1, -1):
            g = grads.get(i)
            node = self.nodes[i]
            if g is None or not node.requires_grad or node.backward_fn is None:
                continue
            need = [self.nodes[j].requires_grad for j in node.inputs]
            for j, nj, gj in zip(node.inputs, need, node.backward_fn(g, need)):
                if not nj:
                    continue
                grads[j] = grads[j] + gj if j in grads else gj
        return {
            i: grads.get(i, np.zeros_like(n.value))
            for i, n in enumerate(self.nodes[: loss + 1])
            if n.op == "leaf" and n.requires_grad
        }


def op_apply(tape: Tape, op: str, inputs: Sequence[int], **attrs) -> int:
    return tape.apply(op, *inputs, **attrs)


def backward(tape: Tape, loss: int) -> dict[int, Tensor]:
    return tape.backward(loss)


def grad_check(f, point, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, leaf)`` builds a scalar loss from ``leaf`` and returns its node id.
    ``point`` may also be a sequence of arrays, in which case ``f`` receives a
    list of leaf ids and the error is maximized over all of them.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-6, 1e-3]")
    multi = isinstance(point, (list, tuple))
    points = [as_tensor(p) for p in (point if multi else [point])]

    def evaluate(arrays, want_grad):
        tape = Tape()
        ids = [tape.leaf(a) for a in arrays]
        loss = f(tape, ids if multi else ids[0])
        val = float(tape.value(loss))
        if not np.isfinite(val):
            raise FloatingPointError("non-finite forward value in grad_check")
        return val, (tape.backward(loss), ids) if want_grad else None

    _, (grads, ids) = evaluate(points, True)
    worst = 0.0
    for k, p in enumerate(points):
        analytic = grads[ids[k]]
        flat = p.reshape(-1)
        for idx in range(flat.size):
            shifted = [q.copy() for q in points]
            sf = shifted[k].reshape(-1)
            sf[idx] = flat[idx] + h
            up, _ = evaluate(shifted, False)
            sf[idx] = flat[idx] - h
            down, _ = evaluate(shifted, False)
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
