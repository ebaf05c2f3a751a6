"""Latent-space predictive objective: future aggregator, latent alignment, grounding,
multi-quantile forecasting loss and their weighted sum.

Gradient routing:
  * the latent loss sees the aggregated targets through stop_gradient, so it only
    trains the predictor (tokenizer + backbone);
  * the grounding loss decodes targets with a gradient-blocked view of the forecast
    head, so it only trains the aggregator and the tokenizer;
  * the forecasting loss trains the live head, the backbone and the tokenizer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .config import INIT_STD, LOSS_PRESETS, LOSS_WEIGHTS, NORM_FLOOR, QUANTILE_LEVELS
from .errors import ConfigError, DimensionError, TrainingGuardError, WindowError
from .tensor import (
    TensorNode, as_node, depthwise_conv1d, l2_normalize, matmul, mean, mul, no_grad,
    pinball_loss, silu, stop_gradient, sum_,
)

if TYPE_CHECKING:
    from .model import EidosModel

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Parameter groups
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantileHeadParams:
    """Residual head d -> l*|Q|: silu(h W_in + b_in) W_out + b_out + h W_skip."""

    W_in: TensorNode
    b_in: TensorNode
    W_out: TensorNode
    b_out: TensorNode
    W_skip: TensorNode
    levels: tuple[float, ...] = QUANTILE_LEVELS

    @classmethod
    def from_group(cls, group: Mapping[str, TensorNode],
                   levels: Sequence[float] = QUANTILE_LEVELS) -> "QuantileHeadParams":
        return cls(group["W_in"], group["b_in"], group["W_out"], group["b_out"],
                   group["W_skip"], tuple(levels))

    def frozen(self) -> "QuantileHeadParams":
        """Same weights, gradient-blocked."""
        return QuantileHeadParams(stop_gradient(self.W_in), stop_gradient(self.b_in),
                                  stop_gradient(self.W_out), stop_gradient(self.b_out),
                                  stop_gradient(self.W_skip), self.levels)


@dataclass(frozen=True)
class AggregatorParams:
    """h_phi: valid temporal convolution over the future window, then a residual MLP.

    kind "depthwise" learns one kernel column per channel; "linear" learns one
    temporal kernel shared by all channels; "avgpool" uses the fixed 1/l kernel.
    """

    kind: str
    horizon: int
    kernel: TensorNode | None     # [l, d] depthwise, [l, 1] linear, None avgpool
    mlp_w1: TensorNode            # [d, d]
    mlp_b1: TensorNode            # [d]
    mlp_w2: TensorNode            # [d, d]
    mlp_b2: TensorNode            # [d]

    @classmethod
    def from_group(cls, group: Mapping[str, TensorNode], kind: str, horizon: int) -> "AggregatorParams":
        return cls(kind, horizon, group.get("kernel"), group["mlp_w1"], group["mlp_b1"],
                   group["mlp_w2"], group["mlp_b2"])

    def conv_kernel(self, d: int) -> TensorNode:
        if self.kind == "depthwise":
            return self.kernel
        if self.kind == "linear":
            return mul(self.kernel, np.ones((1, d)))
        return as_node(np.full((self.horizon, d), 1.0 / self.horizon))


def init_head(d_model: int, hidden: int, horizon: int, n_q: int,
              rng: np.random.Generator) -> dict[str, np.ndarray]:
    out = horizon * n_q
    return {
        "W_in": rng.normal(0.0, INIT_STD, size=(d_model, hidden)),
        "b_in": np.zeros(hidden),
        "W_out": rng.normal(0.0, INIT_STD, size=(hidden, out)),
        "b_out": np.zeros(out),
        "W_skip": rng.normal(0.0, INIT_STD, size=(d_model, out)),
    }


def init_aggregator(kind: str, d_model: int, horizon: int,
                    rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {
        "mlp_w1": rng.normal(0.0, INIT_STD, size=(d_model, d_model)),
        "mlp_b1": np.zeros(d_model),
        "mlp_w2": rng.normal(0.0, INIT_STD, size=(d_model, d_model)),
        "mlp_b2": np.zeros(d_model),
    }
    # kernels start near the window mean so early targets are smooth summaries
    if kind == "depthwise":
        params["kernel"] = 1.0 / horizon + rng.normal(0.0, INIT_STD, size=(horizon, d_model))
    elif kind == "linear":
        params["kernel"] = 1.0 / horizon + rng.normal(0.0, INIT_STD, size=(horizon, 1))
    elif kind != "avgpool":
        raise ConfigError(f"unknown aggregator kind '{kind}'")
    return params


@dataclass(frozen=True)
class LossWeights:
    lambda_latent: float = LOSS_WEIGHTS["lambda_latent"]
    lambda_gnd: float = LOSS_WEIGHTS["lambda_gnd"]
    lambda_pred: float = LOSS_WEIGHTS["lambda_pred"]

    def __post_init__(self):
        for name in ("lambda_latent", "lambda_gnd", "lambda_pred"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")

    @classmethod
    def from_preset(cls, name: str) -> "LossWeights":
        if name not in LOSS_PRESETS:
            raise ConfigError(f"unknown loss preset '{name}' (choose from {sorted(LOSS_PRESETS)})")
        return cls(**LOSS_PRESETS[name])


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def apply_head(h, head: QuantileHeadParams, horizon: int) -> TensorNode:
    """[..., d] -> [..., horizon, |Q|] quantile block (normalized scale)."""
    h = as_node(h)
    u = matmul(silu(matmul(h, head.W_in) + head.b_in), head.W_out) + head.b_out
    out = u + matmul(h, head.W_skip)
    return out.reshape(h.shape[:-1] + (horizon, len(head.levels)))


def future_windows(x, horizon: int) -> np.ndarray:
    """[..., T] -> [..., T - l, l] with row t = x[t+1 : t+1+l]."""
    arr = np.asarray(x, dtype=np.float64)
    T = arr.shape[-1]
    if T <= horizon:
        raise WindowError(f"need T > l for future windows, got T={T}, l={horizon}")
    return np.lib.stride_tricks.sliding_window_view(arr[..., 1:], horizon, axis=-1)


def aggregate_targets(z, agg: AggregatorParams, horizon: int | None = None) -> TensorNode:
    """[..., T, d] embeddings -> [..., T - l, d] targets; row t summarizes z[t+1 : t+1+l].

    The target is ``c + mlp(c)`` where ``c`` is the learned depthwise kernel
    average of the future embeddings, so an all-zero MLP gives back ``c``.
    """
    z = as_node(z)
    l = horizon if horizon is not None else agg.horizon
    T, d = z.shape[-2], z.shape[-1]
    if T <= l:
        raise WindowError(f"aggregate_targets needs T > l, got T={T}, l={l}")
    future = z[(Ellipsis, slice(1, None), slice(None))]
    c = depthwise_conv1d(future, agg.conv_kernel(d))
    return c + matmul(silu(matmul(c, agg.mlp_w1) + agg.mlp_b1), agg.mlp_w2) + agg.mlp_b2


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def latent_loss(pred, target, eps: float = NORM_FLOOR) -> TensorNode:
    """-mean_t cos(pred_t, sg(target_t)); a row with norm <= eps contributes cosine 0 and still counts in the mean."""
    pred, target = as_node(pred), as_node(target)
    if pred.shape != target.shape:
        raise DimensionError(f"latent_loss shape mismatch: {pred.shape} vs {target.shape}")
    p = l2_normalize(pred, eps)
    t = l2_normalize(stop_gradient(target), eps)
    return -mean(sum_(mul(p, t), axis=-1))


def quantile_loss(pred_q, y, levels: Sequence[float] = QUANTILE_LEVELS) -> TensorNode:
    """(1 / (|Q| l)) sum_{t,q} max[q (y_t - yhat), (1 - q)(yhat - y_t)], averaged over leading axes."""
    pred_q = as_node(pred_q)
    y = np.asarray(y, dtype=np.float64)
    if pred_q.shape[:-1] != y.shape:
        raise DimensionError(f"quantile_loss: predictions {pred_q.shape} vs targets {y.shape}")
    return pinball_loss(pred_q, y, levels)


def grounding_loss(h_target, x, head_frozen: QuantileHeadParams,
                   levels: Sequence[float] | None = None, horizon: int | None = None) -> TensorNode:
    """Mean over t of the quantile loss of head_frozen(h_{t+1}) against x[t+1 : t+1+l]."""
    h_target = as_node(h_target)
    levels = tuple(levels) if levels is not None else head_frozen.levels
    l = horizon if horizon is not None else head_frozen.W_skip.shape[1] // len(levels)
    windows = future_windows(x, l)
    if windows.shape[-2] != h_target.shape[-2]:
        raise DimensionError(f"grounding: {h_target.shape[-2]} targets vs {windows.shape[-2]} windows")
    return quantile_loss(apply_head(h_target, head_frozen, l), windows, levels)


def _check_finite(components: Mapping[str, float], step: int) -> None:
    for name, value in components.items():
        if not np.isfinite(value):
            raise TrainingGuardError(name, step, value)


def joint_loss(model: "EidosModel", windows, weights: LossWeights,
               step: int = -1) -> tuple[TensorNode, dict[str, float]]:
    """lambda_pred L_pred + lambda_latent L_latent + lambda_gnd L_gnd over normalized windows.

    Every position with a full future window is supervised. Components weighted by
    zero are still evaluated (without a graph) so they can be logged.
    """
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    l = model.cfg.horizon
    n = x.shape[-1] - l
    if n < 1:
        raise WindowError(f"window length {x.shape[-1]} must exceed horizon {l}")
    levels = model.cfg.quantiles

    z = model.embed(x)
    hidden = model.backbone(z).hidden
    pred_rows = hidden[(slice(None), slice(0, n))]
    targets = future_windows(x, l)

    terms: dict[str, tuple[float, TensorNode]] = {}
    terms["pred"] = (weights.lambda_pred, quantile_loss(model.head(pred_rows), targets, levels))

    def latent_and_gnd():
        h_target = aggregate_targets(z, model.aggregator(), l)
        return (latent_loss(pred_rows, h_target),
                grounding_loss(h_target, x, model.grounding_head(), levels, l))

    if weights.lambda_latent > 0 or weights.lambda_gnd > 0:
        lat, gnd = latent_and_gnd()
    else:
        with no_grad():
            lat, gnd = latent_and_gnd()
    terms["latent"] = (weights.lambda_latent, lat)
    terms["gnd"] = (weights.lambda_gnd, gnd)

    components = {name: node.item() for name, (_, node) in terms.items()}
    _check_finite(components, step)

    total = None
    for name in ("pred", "latent", "gnd"):
        w, node = terms[name]
        if w == 0:
            continue
        part = node if w == 1.0 else node * w
        total = part if total is None else total + part
    if total is None:
        total = terms["pred"][1] * 0.0
    components["total"] = total.item()
    return total, components
