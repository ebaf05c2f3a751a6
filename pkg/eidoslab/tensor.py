"""Dense float64 tensors with a dynamic reverse-mode tape.

Every operation returns a new ``TensorNode``. When gradients are enabled and any
input requires a gradient, the output remembers its parents and a closure that maps
the output gradient to one gradient per parent. ``backward`` replays the recorded
graph in reverse creation order.

The graph is rebuilt on every forward pass; nothing is cached between steps.
"""
from __future__ import annotations

import contextlib
import itertools
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, WindowError

log = logging.getLogger(__name__)

_SEQ = itertools.count()
_STATE = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording for the current thread."""
    prev = grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = prev


class TensorNode:
    """A value in the differentiation graph.

    ``data`` is treated as immutable once the node exists; only ``grad`` is
    written after creation (accumulated by ``backward``).
    """

    __slots__ = ("data", "grad", "requires_grad", "op_tag", "parents", "_backward", "seq")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, op_tag: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op_tag = op_tag
        self.parents: tuple[TensorNode, ...] = ()
        self._backward: BackwardFn | None = None
        self.seq = next(_SEQ)

    # -- introspection -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"TensorNode(shape={self.shape}, op={self.op_tag}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False) -> TensorNode:
    return TensorNode(data, requires_grad=requires_grad)


def parameter(data) -> TensorNode:
    return TensorNode(np.array(data, dtype=np.float64), requires_grad=True, op_tag="param")


def as_node(x) -> TensorNode:
    return x if isinstance(x, TensorNode) else TensorNode(x, op_tag="const")


def _make(data: np.ndarray, parents: Iterable[TensorNode], backward: BackwardFn, op_tag: str) -> TensorNode:
    parents = tuple(parents)
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = TensorNode(data, requires_grad=track, op_tag=op_tag)
    if track:
        out.parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Graph + backward
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """Nodes reachable from a root, in creation order, with parent indices."""

    nodes: list[TensorNode]
    edges: list[tuple[int, ...]]

    @classmethod
    def trace(cls, root: TensorNode) -> "Graph":
        seen = {id(root): root}
        stack = [root]
        while stack:
            node = stack.pop()
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    seen[id(parent)] = parent
                    stack.append(parent)
        nodes = sorted(seen.values(), key=lambda n: n.seq)
        index = {id(n): i for i, n in enumerate(nodes)}
        edges = [
            tuple(index[id(p)] if p.requires_grad else -1 for p in n.parents)
            for n in nodes
        ]
        return cls(nodes=nodes, edges=edges)

    def is_topological(self) -> bool:
        return all(p < i for i, parents in enumerate(self.edges) for p in parents if p >= 0)


def backward(loss: TensorNode) -> Graph:
    """Populate ``grad`` on every node that requires it and feeds ``loss``.

    Leaf gradients accumulate across calls; callers reset them between steps.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph.trace(loss)
    nodes = graph.nodes
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[-1] = np.ones_like(loss.data)

    for i in range(len(nodes) - 1, -1, -1):
        node = nodes[i]
        g = grads[i]
        if g is None:
            continue
        if not node.parents:
            node.grad = np.array(g) if node.grad is None else node.grad + g
            continue
        node.grad = g
        parent_grads = node._backward(g)
        for pi, pg in zip(graph.edges[i], parent_grads):
            if pi < 0 or pg is None:
                continue
            grads[pi] = pg if grads[pi] is None else grads[pi] + pg
        grads[i] = None
    return graph


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> TensorNode:
    a, b = as_node(a), as_node(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> TensorNode:
    a, b = as_node(a), as_node(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> TensorNode:
    a, b = as_node(a), as_node(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> TensorNode:
    a, b = as_node(a), as_node(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> TensorNode:
    a = as_node(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sin(x) -> TensorNode:
    x = as_node(x)
    return _make(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),), "sin")


def sigmoid(x) -> TensorNode:
    x = as_node(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x) -> TensorNode:
    x = as_node(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _make(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),), "silu")


def tanh(x) -> TensorNode:
    x = as_node(x)
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(x) -> TensorNode:
    x = as_node(x)
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0),), "relu")


def stop_gradient(x) -> TensorNode:
    """Identity on values; the result never passes a gradient back."""
    x = as_node(x)
    return TensorNode(x.data, requires_grad=False, op_tag="stop_gradient")


# ---------------------------------------------------------------------------
# Shape ops and reductions
# ---------------------------------------------------------------------------

def matmul(a, b) -> TensorNode:
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def _back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), _back, "matmul")


def sum_(x, axis=None, keepdims: bool = False) -> TensorNode:
    x = as_node(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(out, (x,), _back, "sum")


def mean(x, axis=None, keepdims: bool = False) -> TensorNode:
    x = as_node(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape) -> TensorNode:
    x = as_node(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> TensorNode:
    x = as_node(x)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(x, idx) -> TensorNode:
    x = as_node(x)
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) for p in parts)

    def _back(g):
        full = np.zeros(x.shape, dtype=np.float64)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), _back, "getitem")


def concat(nodes: Sequence[TensorNode], axis: int = 0) -> TensorNode:
    nodes = [as_node(n) for n in nodes]
    out = np.concatenate([n.data for n in nodes], axis=axis)
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]
    return _make(out, nodes, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# ---------------------------------------------------------------------------
# Model primitives
# ---------------------------------------------------------------------------

def softmax_lastdim(x) -> TensorNode:
    """Max-subtracted softmax over the last axis; -inf entries get weight 0."""
    x = as_node(x)
    if x.shape[-1] < 1:
        raise DimensionError(f"softmax needs a non-empty last axis, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def _back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), _back, "softmax")


def layer_norm(x, gain, bias, eps: float) -> TensorNode:
    x, gain, bias = as_node(x), as_node(gain), as_node(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias {gain.shape}/{bias.shape} vs last extent {d}")
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be > 0, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def _back(g):
        dxhat = g * gain.data
        dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        return dx, dgain, dbias

    return _make(out, (x, gain, bias), _back, "layer_norm")


def depthwise_conv1d(x, kernel) -> TensorNode:
    """Valid per-channel convolution: out[..., t, c] = sum_j kernel[j, c] * x[..., t + j, c]."""
    x, kernel = as_node(x), as_node(kernel)
    if kernel.ndim != 2 or x.ndim < 2 or x.shape[-1] != kernel.shape[-1]:
        raise DimensionError(f"depthwise_conv1d shapes: x {x.shape}, kernel {kernel.shape}")
    T, L = x.shape[-2], kernel.shape[0]
    if T < L:
        raise WindowError(f"depthwise_conv1d needs T >= L, got T={T}, L={L}")
    n = T - L + 1
    out = np.zeros(x.shape[:-2] + (n, x.shape[-1]))
    for j in range(L):
        out += kernel.data[j] * x.data[..., j:j + n, :]

    def _back(g):
        dx = np.zeros(x.shape)
        dk = np.zeros(kernel.shape)
        lead = g.reshape(-1, n, x.shape[-1])
        xs = x.data.reshape(-1, T, x.shape[-1])
        for j in range(L):
            dx[..., j:j + n, :] += g * kernel.data[j]
            dk[j] = (lead * xs[:, j:j + n, :]).sum(axis=(0, 1))
        return dx, dk

    return _make(out, (x, kernel), _back, "depthwise_conv1d")


def l2_normalize(x, eps: float = 1e-12) -> TensorNode:
    """Row-wise x / ||x|| over the last axis; rows with ||x|| <= eps map to zero with zero gradient."""
    x = as_node(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    live = norm > eps
    safe = np.where(live, norm, 1.0)
    y = np.where(live, x.data / safe, 0.0)

    def _back(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        return (np.where(live, (g - y * proj) / safe, 0.0),)

    return _make(y, (x,), _back, "l2_normalize")


def pinball_loss(pred, target, levels: Sequence[float]) -> TensorNode:
    """Mean pinball loss of quantile predictions ``pred[..., q]`` against ``target[...]``."""
    pred = as_node(pred)
    q = np.asarray(levels, dtype=np.float64)
    if pred.shape[-1] != q.size:
        raise DimensionError(f"pinball_loss: {pred.shape[-1]} quantile columns vs {q.size} levels")
    y = np.asarray(target.data if isinstance(target, TensorNode) else target, dtype=np.float64)
    err = y[..., None] - pred.data
    loss = np.maximum(q * err, (q - 1.0) * err)
    count = loss.size

    def _back(g):
        slope = np.where(err > 0, -q, 1.0 - q)
        return (g * slope / count,)

    return _make(np.asarray(loss.mean()), (pred,), _back, "pinball")
