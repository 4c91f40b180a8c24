"""Reverse-mode automatic differentiation over dense numpy arrays.

A Node wraps an ndarray value, an optional gradient of the same shape,
and a backward closure. Graphs are built eagerly by the op functions
below and differentiated by ``backward`` in reverse topological order,
accumulating gradients additively across fan-out. Training runs in
float32; gradient checking runs the same graphs in float64.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class DivergenceError(RuntimeError):
    """Non-finite values where finite ones are required."""


class Node:
    """One vertex of the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward")

    def __init__(
        self,
        value: np.ndarray,
        requires_grad: bool = False,
        parents: tuple["Node", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.value.dtype, copy=True)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(value, dtype=np.float32) -> Node:
    """Graph leaf that never receives a gradient."""
    return Node(np.asarray(value, dtype=dtype))


def parameter(value, dtype=np.float32) -> Node:
    """Trainable graph leaf."""
    return Node(np.array(value, dtype=dtype, copy=True), requires_grad=True)


def _track(inputs: Sequence[Node]) -> bool:
    return any(n.requires_grad or n.parents for n in inputs)


def _result(value, inputs: Sequence[Node], backward) -> Node:
    if _track(inputs):
        return Node(value, parents=tuple(inputs), backward=backward)
    return Node(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Node, b: Node) -> Node:
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} + {b.shape}") from exc

    def backward(g):
        if a.requires_grad or a.parents:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b.parents:
            b.accumulate(_unbroadcast(g, b.shape))

    return _result(value, (a, b), backward)


def sub(a: Node, b: Node) -> Node:
    try:
        value = a.value - b.value
    except ValueError as exc:
        raise ShapeError(f"sub: {a.shape} - {b.shape}") from exc

    def backward(g):
        if a.requires_grad or a.parents:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b.parents:
            b.accumulate(-_unbroadcast(g, b.shape))

    return _result(value, (a, b), backward)


def mul(a: Node, b: Node) -> Node:
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} * {b.shape}") from exc

    def backward(g):
        if a.requires_grad or a.parents:
            a.accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad or b.parents:
            b.accumulate(_unbroadcast(g * a.value, b.shape))

    return _result(value, (a, b), backward)


def matmul(a: Node, b: Node) -> Node:
    """numpy matmul semantics for 1-D/2-D operands and (..., M, K) @ (K, N)."""
    av, bv = a.value, b.value
    try:
        value = av @ bv
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from exc

    def backward(g):
        if av.ndim == 1 and bv.ndim == 1:
            ga, gb = g * bv, g * av
        elif bv.ndim == 1:
            # (..., K) @ (K,) -> (...)
            ga = g[..., None] * bv
            gb = np.tensordot(av, g, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
        elif av.ndim == 1:
            # (K,) @ (K, N) -> (N,)
            ga = bv @ g
            gb = np.outer(av, g)
        else:
            # (..., M, K) @ (K, N); 2-D rhs only
            ga = g @ bv.T
            gb = np.tensordot(av, g, axes=(tuple(range(g.ndim - 1)), tuple(range(g.ndim - 1))))
        if a.requires_grad or a.parents:
            a.accumulate(ga)
        if b.requires_grad or b.parents:
            b.accumulate(gb)

    return _result(value, (a, b), backward)


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    if not nodes:
        raise ShapeError("concat: no inputs")
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[n.shape for n in nodes]}") from exc
    sizes = [n.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for n, start, stop in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad or n.parents:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                n.accumulate(g[tuple(index)])

    return _result(value, tuple(nodes), backward)


def node_slice(a: Node, key) -> Node:
    """Basic slicing or integer-array gathering; duplicates accumulate."""
    value = a.value[key]
    has_array = isinstance(key, (np.ndarray, list)) or (
        isinstance(key, tuple) and any(isinstance(k, (np.ndarray, list)) for k in key)
    )

    def backward(g):
        if not (a.requires_grad or a.parents):
            return
        ga = np.zeros_like(a.value)
        if has_array:
            np.add.at(ga, key, g)
        else:
            ga[key] += g
        a.accumulate(ga)

    return _result(value, (a,), backward)


def reshape(a: Node, shape) -> Node:
    try:
        value = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from exc

    def backward(g):
        a.accumulate(g.reshape(a.shape))

    return _result(value, (a,), backward)


def sigmoid(a: Node) -> Node:
    x = a.value
    value = np.empty_like(x)
    pos = x >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    value[~pos] = ex / (1.0 + ex)

    def backward(g):
        a.accumulate(g * value * (1.0 - value))

    return _result(value, (a,), backward)


def tanh(a: Node) -> Node:
    value = np.tanh(a.value)

    def backward(g):
        a.accumulate(g * (1.0 - value * value))

    return _result(value, (a,), backward)


def softplus(a: Node) -> Node:
    """log(1 + exp(x)), computed without overflow; gradient is sigmoid(x)."""
    x = a.value
    value = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        a.accumulate(g * s)

    return _result(value, (a,), backward)


def softmax(a: Node, axis: int = -1) -> Node:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    value = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        a.accumulate(value * (g - inner))

    return _result(value, (a,), backward)


def mean(a: Node, axis=None) -> Node:
    value = a.value.mean(axis=axis)
    count = a.value.size if axis is None else a.value.shape[axis]

    def backward(g):
        if axis is None:
            ga = np.full_like(a.value, g / count)
        else:
            ga = np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy()
        a.accumulate(ga)

    return _result(value, (a,), backward)


def node_sum(a: Node, axis=None) -> Node:
    value = a.value.sum(axis=axis)

    def backward(g):
        if axis is None:
            ga = np.full_like(a.value, g)
        else:
            ga = np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()
        a.accumulate(ga)

    return _result(value, (a,), backward)


def node_max(a: Node, axis=None) -> Node:
    """Max reduction; ties share the gradient evenly."""
    value = a.value.max(axis=axis)

    def backward(g):
        if axis is None:
            mask = (a.value == value).astype(a.value.dtype)
            ga = mask * (g / mask.sum())
        else:
            expanded = np.expand_dims(value, axis)
            mask = (a.value == expanded).astype(a.value.dtype)
            counts = mask.sum(axis=axis, keepdims=True)
            ga = mask * (np.expand_dims(g, axis) / counts)
        a.accumulate(ga)

    return _result(value, (a,), backward)


_OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "concat": concat,
    "slice": node_slice,
    "reshape": reshape,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "softmax": softmax,
    "mean": mean,
    "max": node_max,
    "sum": node_sum,
}


def op_apply(kind: str, *inputs, **kwargs) -> Node:
    """Dispatch an op by name; shape errors name the op and shapes."""
    if kind not in _OPS:
        raise ShapeError(f"unknown op kind {kind!r}")
    return _OPS[kind](*inputs, **kwargs)


def topo_order(root: Node) -> list[Node]:
    """Iterative post-order over parents; safe for very deep graphs."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Populate ``grad`` on every reachable node that wants one."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # intermediate grads are only needed during the sweep; free them
    for node in order:
        if not node.requires_grad and node is not loss:
            node.grad = None


def zero_grads(params: Iterable[Node]) -> None:
    for p in params:
        p.zero_grad()


def clip_global_norm(params: Iterable[Node], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    grads = []
    for p in params:
        if p.grad is not None:
            grads.append(p)
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in grads:
            p.grad *= scale
    return norm


class Adam:
    """Bias-corrected Adam over named parameter collections."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Node]) -> None:
        """One update; parameters with no gradient are left untouched."""
        for name, p in params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise DivergenceError(
                    f"divergence: non-finite gradient for {name!r}; "
                    "consider lowering the learning rate"
                )
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.value -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.value.dtype
            )


def adam_step(state: Adam, params: dict[str, Node]) -> Adam:
    """Functional-style wrapper around ``Adam.step``."""
    state.step(params)
    return state


class GradCheckReport:
    """Outcome of comparing analytic gradients to finite differences."""

    def __init__(self, tolerance: float):
        self.tolerance = tolerance
        self.per_param: dict[str, float] = {}
        self.worst: tuple[str, int] | None = None

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, "
            f"tolerance={self.tolerance:.1e})"
        )


def check_gradients(
    forward_fn: Callable[[], Node],
    params: dict[str, Node],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar loss with central differences.

    ``forward_fn`` must rebuild the graph from the live parameter values
    on every call. Parameters larger than ``max_entries`` are spot-checked
    on a seeded random subsample of entries. Requires float64 parameters.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise DivergenceError(f"gradient check requires float64 params ({name})")

    zero_grads(params.values())
    loss = forward_fn()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
        for name, p in params.items()
    }

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    for name, p in params.items():
        n = p.value.size
        if n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = np.arange(n)
        worst = 0.0
        for i in idx:
            where = np.unravel_index(int(i), p.value.shape)
            keep = p.value[where]
            p.value[where] = keep + h
            f_plus = float(forward_fn().value)
            p.value[where] = keep - h
            f_minus = float(forward_fn().value)
            p.value[where] = keep
            numeric = (f_plus - f_minus) / (2 * h)
            a = float(analytic[name][where])
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
            if err > worst:
                worst = err
                if err > report.max_rel_error:
                    report.worst = (name, int(i))
        report.per_param[name] = worst
    return report
