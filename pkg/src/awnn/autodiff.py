"""Define-by-run reverse-mode autodiff over dense 2-D float64 arrays.

Every value is a 2-D ``numpy`` array; scalars are 1x1.  A graph is rebuilt on
each forward pass and discarded after ``backward``.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "relu6", "leaky_relu", "tanh")
RELU_FAMILY = ("relu", "relu6", "leaky_relu")
DEFAULT_LEAKY_SLOPE = 0.01


class ShapeError(ValueError):
    pass


def as_dense(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got {a.ndim} dimensions")
    if not np.all(np.isfinite(a)):
        raise ValueError("array contains non-finite entries")
    return a


class Node:
    """A value on the tape together with its accumulated gradient."""

    __slots__ = ("value", "grad", "parents", "op", "_backward")

    def __init__(self, value, parents=(), op="leaf"):
        self.value = value if parents else as_dense(value)
        self.grad = np.zeros_like(self.value)
        self.parents = parents
        self.op = op
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    def backward(self):
        if self.value.shape != (1, 1):
            raise ShapeError("backward() needs a scalar (1x1) node")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def _check_node(x):
    return x if isinstance(x, Node) else Node(x)


def matmul(a: Node, b: Node) -> Node:
    a, b = _check_node(a), _check_node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} x {b.shape})")
    out = Node(a.value @ b.value, (a, b), "matmul")

    def _backward():
        a.grad += out.grad @ b.value.T
        b.grad += a.value.T @ out.grad

    out._backward = _backward
    return out


def affine(x: Node, w: Node) -> Node:
    """``x @ w[:, :-1].T + w[:, -1]``: dense layer with the bias as last column."""
    x, w = _check_node(x), _check_node(w)
    if w.shape[1] != x.shape[1] + 1:
        raise ShapeError(
            f"affine: weight has {w.shape[1]} columns, expected {x.shape[1] + 1}"
        )
    out = Node(x.value @ w.value[:, :-1].T + w.value[:, -1], (x, w), "affine")

    def _backward():
        g = out.grad
        x.grad += g @ w.value[:, :-1]
        w.grad[:, :-1] += g.T @ x.value
        w.grad[:, -1] += g.sum(axis=0)

    out._backward = _backward
    return out


def add(a: Node, b: Node) -> Node:
    a, b = _check_node(a), _check_node(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ ({a.shape} vs {b.shape})")
    out = Node(a.value + b.value, (a, b), "add")

    def _backward():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = _backward
    return out


def scale(x: Node, c: float) -> Node:
    x = _check_node(x)
    out = Node(x.value * c, (x,), "scale")

    def _backward():
        x.grad += c * out.grad

    out._backward = _backward
    return out


def total(x: Node) -> Node:
    x = _check_node(x)
    out = Node(np.array([[x.value.sum()]]), (x,), "sum")

    def _backward():
        x.grad += out.grad[0, 0]

    out._backward = _backward
    return out


def sum_squares(x: Node) -> Node:
    x = _check_node(x)
    out = Node(np.array([[np.sum(x.value * x.value)]]), (x,), "sum_squares")

    def _backward():
        x.grad += 2.0 * out.grad[0, 0] * x.value

    out._backward = _backward
    return out


def activation_value(kind: str, z: np.ndarray, slope: float = DEFAULT_LEAKY_SLOPE):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "relu6":
        return np.minimum(np.maximum(z, 0.0), 6.0)
    if kind == "leaky_relu":
        return np.where(z >= 0.0, z, slope * z)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_derivative(kind: str, z: np.ndarray, slope: float = DEFAULT_LEAKY_SLOPE):
    # subgradient 0 at the kinks of relu/relu6
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "relu6":
        return ((z > 0.0) & (z < 6.0)).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(z >= 0.0, 1.0, slope)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    raise ValueError(f"unknown activation {kind!r}")


def elementwise(kind: str, x: Node, slope: float = DEFAULT_LEAKY_SLOPE) -> Node:
    x = _check_node(x)
    out = Node(activation_value(kind, x.value, slope), (x,), kind)

    def _backward():
        x.grad += activation_derivative(kind, x.value, slope) * out.grad

    out._backward = _backward
    return out


def col_scale(x: Node, s: Node) -> Node:
    """Multiply column ``j`` of ``x`` by ``s[0, j]``."""
    x, s = _check_node(x), _check_node(s)
    if s.shape != (1, x.shape[1]):
        raise ShapeError(f"col_scale: scale shape {s.shape}, expected (1, {x.shape[1]})")
    out = Node(x.value * s.value, (x, s), "col_scale")

    def _backward():
        x.grad += out.grad * s.value
        s.grad += np.sum(x.value * out.grad, axis=0, keepdims=True)

    out._backward = _backward
    return out


def _labels_array(labels, n_rows, n_classes):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n_rows:
        raise ValueError(f"expected {n_rows} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class indices")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")
    return y


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Batch-mean negative log-likelihood of integer ``labels``."""
    logits = _check_node(logits)
    m, c = logits.shape
    y = _labels_array(labels, m, c)
    logp = log_softmax(logits.value)
    rows = np.arange(m)
    out = Node(np.array([[-logp[rows, y].mean()]]), (logits,), "softmax_xent")

    def _backward():
        g = np.exp(logp)
        g[rows, y] -= 1.0
        logits.grad += g * (out.grad[0, 0] / m)

    out._backward = _backward
    return out


def mse(pred: Node, target) -> Node:
    """Mean over the batch of half the squared error (unit-variance Gaussian NLL)."""
    pred = _check_node(pred)
    t = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    m = pred.shape[0]
    diff = pred.value - t
    out = Node(np.array([[0.5 * np.sum(diff * diff) / m]]), (pred,), "mse")

    def _backward():
        pred.grad += diff * (out.grad[0, 0] / m)

    out._backward = _backward
    return out
