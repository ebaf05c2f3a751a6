"""Point-wise tokenizers mapping each scalar observation to a d-dimensional embedding.

SiGLU: z_i = GLU(sin(x_i W1 + b)) W4 with GLU(h) = sigmoid(h W2) * (h W3).
Each row depends only on its own time step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import TensorNode, as_node, matmul, mul, sigmoid, sin

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SiGluParams:
    W1: TensorNode   # [1, d_ff]
    b: TensorNode    # [d_ff]
    W2: TensorNode   # [d_ff, glu_width] gate
    W3: TensorNode   # [d_ff, glu_width] value
    W4: TensorNode   # [glu_width, d]

    @classmethod
    def from_group(cls, group: Mapping[str, TensorNode]) -> "SiGluParams":
        return cls(**{k: group[k] for k in ("W1", "b", "W2", "W3", "W4")})

    @property
    def d_model(self) -> int:
        return self.W4.shape[1]


@dataclass(frozen=True)
class LinearEmbedParams:
    W: TensorNode    # [1, d]
    b: TensorNode    # [d]

    @classmethod
    def from_group(cls, group: Mapping[str, TensorNode]) -> "LinearEmbedParams":
        return cls(W=group["W"], b=group["b"])


def init_siglu(d_model: int, d_ff: int, glu_width: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Sine frequencies spread uniformly over (-pi, pi); projections ~ N(0, 1/fan_in)."""
    if min(d_model, d_ff, glu_width) < 1:
        raise ConfigError(f"tokenizer widths must be positive: d={d_model}, d_ff={d_ff}, glu={glu_width}")
    return {
        "W1": rng.uniform(-np.pi, np.pi, size=(1, d_ff)),
        "b": rng.normal(0.0, 1.0, size=(d_ff,)),
        "W2": rng.normal(0.0, 1.0 / np.sqrt(d_ff), size=(d_ff, glu_width)),
        "W3": rng.normal(0.0, 1.0 / np.sqrt(d_ff), size=(d_ff, glu_width)),
        "W4": rng.normal(0.0, 1.0 / np.sqrt(glu_width), size=(glu_width, d_model)),
    }


def init_linear(d_model: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {"W": rng.normal(0.0, 1.0, size=(1, d_model)), "b": np.zeros(d_model)}


def _as_column(x) -> TensorNode:
    arr = np.asarray(x.data if isinstance(x, TensorNode) else x, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] < 1:
        raise ContractError("embed_series needs at least one observation")
    if isinstance(x, TensorNode):
        return x.reshape(arr.shape + (1,))
    return as_node(arr[..., None])


def embed_series(x, params: SiGluParams) -> TensorNode:
    """[..., T] observations -> [..., T, d] embeddings."""
    col = _as_column(x)
    h = sin(matmul(col, params.W1) + params.b)
    gated = mul(sigmoid(matmul(h, params.W2)), matmul(h, params.W3))
    return matmul(gated, params.W4)


def embed_linear(x, params: LinearEmbedParams) -> TensorNode:
    col = _as_column(x)
    return matmul(col, params.W) + params.b
