"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is built on the fly (define-by-run). Every operation returns a new
:class:`Node` holding its forward value and a closure that maps the output
gradient to input gradients. ``backward`` walks the graph in reverse
topological order and *accumulates* into ``Node.grad``; callers zero grads
between optimizer steps.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-12


class ShapeError(ValueError):
    """Raised when two operands cannot be combined."""

    def __init__(self, op: str, shape_a: tuple, shape_b: tuple):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}")


class Node:
    """A value in the computation graph.

    ``data`` and ``grad`` always share shape. Nodes created from constants
    (``requires_grad=False``) never record parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "_backward")
    __array_priority__ = 100.0

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Node", ...] = (),
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        op: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad
        self.parents = parents if requires_grad else ()
        self.op = op
        self._backward = backward if requires_grad else None

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Node(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Node":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Node":
        return Node(self.data.copy())

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def parameter(data) -> Node:
    """A leaf that receives gradients."""
    return Node(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data, parents: tuple[Node, ...], backward, op: str) -> Node:
    needs = any(p.requires_grad for p in parents)
    return Node(data, requires_grad=needs, parents=parents, backward=backward, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Node, b: Node) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# binary elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _make(out, (a, b), bw, "div")


def maximum(a, b) -> Node:
    """Elementwise max; ties send the gradient to the first operand."""
    a, b = as_node(a), as_node(b)
    _broadcast_shape("max", a, b)
    pick_a = a.data >= b.data
    return _make(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
        "max",
    )


def minimum(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("min", a, b)
    pick_a = a.data <= b.data
    return _make(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
        "min",
    )


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------


def neg(a) -> Node:
    a = as_node(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Node:
    """Natural log of ``max(a, EPS)``."""
    a = as_node(a)
    safe = np.maximum(a.data, EPS)
    return _make(np.log(safe), (a,), lambda g: (g * (a.data > EPS) / safe,), "log")


def sqrt(a) -> Node:
    a = as_node(a)
    out = np.sqrt(np.maximum(a.data, 0.0))
    return _make(out, (a,), lambda g: (g * 0.5 / np.maximum(out, np.sqrt(EPS)),), "sqrt")


def pow(a, exponent: float) -> Node:
    """``a ** exponent`` for a constant exponent.

    For exponents below one the derivative is evaluated at ``max(a, EPS)`` so
    that exact zeros do not produce infinities.
    """
    a = as_node(a)
    exponent = float(exponent)
    out = np.power(a.data, exponent)

    def bw(g):
        if exponent == 2.0:
            return (g * 2.0 * a.data,)
        if exponent == 1.0:
            return (g,)
        base = np.maximum(a.data, EPS) if exponent < 1.0 else a.data
        return (g * exponent * np.power(base, exponent - 1.0),)

    return _make(out, (a,), bw, f"pow{exponent:g}")


def sigmoid(a) -> Node:
    a = as_node(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def leaky_relu(a, slope: float = 0.2) -> Node:
    a = as_node(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def abs_(a) -> Node:
    a = as_node(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sin(a) -> Node:
    a = as_node(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Node:
    a = as_node(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def clip(a, lo: float, hi: float) -> Node:
    """Clamp into ``[lo, hi]``; gradient passes only strictly inside."""
    a = as_node(a)
    inside = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


ELEMENTWISE: dict[str, Callable[..., Node]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "pow": pow,
    "max": maximum,
    "min": minimum,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "leaky_relu": leaky_relu,
    "abs": abs_,
    "clip": clip,
    "sin": sin,
    "cos": cos,
}


def elementwise(op_kind: str, *inputs, **kwargs) -> Node:
    """Dispatch an elementwise op by name (see ``ELEMENTWISE``)."""
    try:
        fn = ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}; supported: {sorted(ELEMENTWISE)}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# linear algebra, reductions, shape ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a) -> Node:
    a = as_node(a)
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def sum_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Node:
    a = as_node(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take(a, index) -> Node:
    """Basic/advanced indexing with a scatter-add backward."""
    a = as_node(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw, "index")


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([n.data for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError("concat", nodes[0].shape, nodes[-1].shape) from None
    return _make(out, tuple(nodes), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack_columns(nodes: Sequence) -> Node:
    """Stack equal-length 1-D nodes into an ``(n, k)`` matrix."""
    return concat([reshape(as_node(n), (-1, 1)) for n in nodes], axis=1)


def softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def bce_loss(p, y) -> Node:
    """Mean binary cross-entropy ``-y log p - (1-y) log(1-p)``.

    ``p`` is clamped into ``[EPS, 1-EPS]`` first; ``y`` may be a scalar or an
    array broadcastable against ``p``.
    """
    p = as_node(p)
    y = as_node(y)
    _broadcast_shape("bce", p, y)
    pc = clip(p, EPS, 1.0 - EPS)
    per = -(y * log(pc) + (1.0 - y) * log(1.0 - pc))
    return mean(per)


def cross_entropy(logits, labels: np.ndarray) -> Node:
    """Mean categorical cross-entropy of integer ``labels`` against row logits."""
    logits = as_node(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    lp = log_softmax(logits, axis=1)
    return -mean(take(lp, (np.arange(labels.size), labels)))


def nll_from_probs(probs, labels: np.ndarray) -> Node:
    """Cross-entropy when the input already went through softmax."""
    probs = as_node(probs)
    labels = np.asarray(labels, dtype=np.int64)
    return -mean(log(take(probs, (np.arange(labels.size), labels))))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Node) -> list[Node]:
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
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``grad`` of every reachable node.

    ``root`` must hold a single value.
    """
    if root.data.size != 1 or root.ndim > 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------


def finite_difference_check(
    f: Callable[[], Node],
    params: Sequence[Node],
    h: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the graph from the current ``params`` on every call and
    must be deterministic. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    zero_grad(params)
    f().backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            ai = a.reshape(-1)[i]
            worst = max(worst, abs(ai - numeric) / max(1.0, abs(ai)))
    zero_grad(params)
    return worst
