"""Central finite-difference gradient checks for tensor primitives and losses."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import TensorNode, backward, parameter

FD_STEP = 1e-5


def numerical_grad(fn: Callable[..., TensorNode], arrays: Sequence[np.ndarray],
                   wrt: int, step: float = FD_STEP) -> np.ndarray:
    """d fn / d arrays[wrt] by central differences; ``fn`` takes plain nodes and returns a scalar."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[wrt])
    flat = base[wrt].reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(*[TensorNode(a) for a in base]).item()
        flat[i] = orig - step
        lo = fn(*[TensorNode(a) for a in base]).item()
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return grad


def analytic_grads(fn: Callable[..., TensorNode], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    nodes = [parameter(a) for a in arrays]
    loss = fn(*nodes)
    backward(loss)
    return [n.grad if n.grad is not None else np.zeros_like(n.data) for n in nodes]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a|, |n|, 1e-8) with the scale taken over the whole array."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[..., TensorNode], arrays: Sequence[np.ndarray],
                    step: float = FD_STEP) -> list[float]:
    """Relative error per input between backward() and central differences."""
    analytic = analytic_grads(fn, arrays)
    return [relative_error(analytic[i], numerical_grad(fn, arrays, i, step))
            for i in range(len(arrays))]
