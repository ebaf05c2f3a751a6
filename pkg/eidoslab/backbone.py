"""Decoder-only causal transformer: Pre-LN blocks, rotary positions, KV-cached decoding.

Row t of the output is the predicted latent for position t + 1 and depends only on
input rows <= t. ``forward`` and ``extend`` share one code path, so a cached
step-by-step pass reproduces a full recompute up to floating-point reassociation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .config import INIT_STD, LN_EPS, PRESETS, ROPE_THETA
from .errors import ConfigError, DimensionError
from .tensor import (
    TensorNode, as_node, concat, layer_norm, matmul, mul, silu, softmax_lastdim,
    transpose, _make,
)

log = logging.getLogger(__name__)

Hook = Callable[[TensorNode], TensorNode]


@dataclass(frozen=True)
class BackboneConfig:
    n_layers: int
    d_model: int
    d_intermediate: int
    n_heads: int
    rope_theta: float = ROPE_THETA
    ln_eps: float = LN_EPS

    def __post_init__(self):
        if min(self.n_layers, self.d_model, self.d_intermediate, self.n_heads) < 1:
            raise ConfigError(f"backbone extents must be positive: {self}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.head_dim % 2:
            raise ConfigError(f"head_dim={self.head_dim} must be even for rotary pairs")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "BackboneConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset '{name}' (choose from {sorted(PRESETS)})")
        return cls(**{**PRESETS[name], **overrides})


@dataclass
class KvCache:
    """Per-layer keys/values [B, H, S, head_dim] for one generation session."""

    keys: list[np.ndarray | None]
    values: list[np.ndarray | None]
    filled_len: int = 0

    @classmethod
    def empty(cls, n_layers: int) -> "KvCache":
        return cls(keys=[None] * n_layers, values=[None] * n_layers)

    @property
    def n_layers(self) -> int:
        return len(self.keys)


@dataclass
class BackboneOutput:
    hidden: TensorNode                       # final-normed predictions [B, T, d]
    states: list[TensorNode] = field(default_factory=list)  # residual stream, layer 0..n_layers


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def init_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """N(0, 0.02) weights; output projections scaled by 1/sqrt(2 * n_layers)."""
    d, di = cfg.d_model, cfg.d_intermediate
    out_std = INIT_STD / np.sqrt(2.0 * cfg.n_layers)
    params: dict[str, np.ndarray] = {}
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        params[p + "ln1_g"] = np.ones(d)
        params[p + "ln1_b"] = np.zeros(d)
        for name in ("wq", "wk", "wv"):
            params[p + name] = rng.normal(0.0, INIT_STD, size=(d, d))
        params[p + "wo"] = rng.normal(0.0, out_std, size=(d, d))
        params[p + "ln2_g"] = np.ones(d)
        params[p + "ln2_b"] = np.zeros(d)
        params[p + "w_gate"] = rng.normal(0.0, INIT_STD, size=(d, di))
        params[p + "w_up"] = rng.normal(0.0, INIT_STD, size=(d, di))
        params[p + "w_down"] = rng.normal(0.0, out_std, size=(di, d))
    params["lnf_g"] = np.ones(d)
    params["lnf_b"] = np.zeros(d)
    return params


# ---------------------------------------------------------------------------
# Rotary positions
# ---------------------------------------------------------------------------

def rope_rotate(x, positions, theta: float = ROPE_THETA, seq_axis: int = -2) -> TensorNode:
    """Rotate dimension pairs (2i, 2i+1) by pos * theta^(-2i/head_dim).

    ``x`` has head_dim on the last axis and positions along ``seq_axis``.
    """
    x = as_node(x)
    hd = x.shape[-1]
    if hd % 2:
        raise ConfigError(f"rope needs an even head_dim, got {hd}")
    pos = np.asarray(positions, dtype=np.float64)
    axis = seq_axis % x.ndim
    if pos.ndim != 1 or pos.shape[0] != x.shape[axis]:
        raise DimensionError(f"rope: {pos.shape} positions for axis {axis} of {x.shape}")
    inv_freq = theta ** (-np.arange(0, hd, 2, dtype=np.float64) / hd)
    shape = [1] * x.ndim
    shape[axis] = pos.shape[0]
    shape[-1] = hd // 2
    angle = (pos[:, None] * inv_freq[None, :]).reshape(shape)
    c, s = np.cos(angle), np.sin(angle)
    x0, x1 = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty(x.shape)
    out[..., 0::2] = x0 * c - x1 * s
    out[..., 1::2] = x0 * s + x1 * c

    def _back(g):
        g0, g1 = g[..., 0::2], g[..., 1::2]
        dx = np.empty(x.shape)
        dx[..., 0::2] = g0 * c + g1 * s
        dx[..., 1::2] = -g0 * s + g1 * c
        return (dx,)

    return _make(out, (x,), _back, "rope")


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

def _causal_mask(n_new: int, start: int) -> np.ndarray:
    rows = np.arange(n_new)[:, None] + start
    cols = np.arange(start + n_new)[None, :]
    return np.where(cols > rows, -np.inf, 0.0)


def _attention(h: TensorNode, blk: Mapping[str, TensorNode], cfg: BackboneConfig,
               past: tuple[np.ndarray, np.ndarray] | None, positions: np.ndarray,
               mask: np.ndarray) -> tuple[TensorNode, np.ndarray, np.ndarray]:
    B, T, d = h.shape
    H, hd = cfg.n_heads, cfg.head_dim

    def heads(w):
        return transpose(matmul(h, w).reshape(B, T, H, hd), (0, 2, 1, 3))

    q = rope_rotate(heads(blk["wq"]), positions, cfg.rope_theta)
    k = rope_rotate(heads(blk["wk"]), positions, cfg.rope_theta)
    v = heads(blk["wv"])
    if past is not None:
        k = concat([as_node(past[0]), k], axis=2)
        v = concat([as_node(past[1]), v], axis=2)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd)) + mask
    weights = softmax_lastdim(scores)
    ctx = transpose(matmul(weights, v), (0, 2, 1, 3)).reshape(B, T, d)
    return matmul(ctx, blk["wo"]), k.data, v.data


def _block(x: TensorNode, blk: Mapping[str, TensorNode], cfg: BackboneConfig,
           past, positions, mask) -> tuple[TensorNode, np.ndarray, np.ndarray]:
    h = layer_norm(x, blk["ln1_g"], blk["ln1_b"], cfg.ln_eps)
    attn, k, v = _attention(h, blk, cfg, past, positions, mask)
    x = x + attn
    h = layer_norm(x, blk["ln2_g"], blk["ln2_b"], cfg.ln_eps)
    mlp = matmul(mul(silu(matmul(h, blk["w_gate"])), matmul(h, blk["w_up"])), blk["w_down"])
    return x + mlp, k, v


def _layer(params: Mapping[str, TensorNode], i: int) -> dict[str, TensorNode]:
    prefix = f"blocks.{i}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def _run(z: TensorNode, cfg: BackboneConfig, params: Mapping[str, TensorNode],
         cache: KvCache | None, hooks: Mapping[int, Hook] | None):
    z = as_node(z)
    if z.shape[-1] != cfg.d_model:
        raise ConfigError(f"embedding width {z.shape[-1]} != d_model {cfg.d_model}")
    squeeze = z.ndim == 2
    x = z.reshape(1, *z.shape) if squeeze else z
    if x.ndim != 3 or x.shape[1] < 1:
        raise DimensionError(f"backbone input must be [T, d] or [B, T, d] with T >= 1, got {z.shape}")
    start = cache.filled_len if cache is not None else 0
    n_new = x.shape[1]
    positions = np.arange(start, start + n_new)
    mask = _causal_mask(n_new, start)
    hooks = hooks or {}

    if 0 in hooks:
        x = hooks[0](x)
    states = [x]
    new_kv = []
    for i in range(cfg.n_layers):
        past = None
        if cache is not None and cache.keys[i] is not None:
            past = (cache.keys[i], cache.values[i])
        x, k, v = _block(x, _layer(params, i), cfg, past, positions, mask)
        if i + 1 in hooks:
            x = hooks[i + 1](x)
        states.append(x)
        new_kv.append((k, v))
    out = layer_norm(x, params["lnf_g"], params["lnf_b"], cfg.ln_eps)
    if squeeze:
        out = out.reshape(out.shape[1:])
        states = [s.reshape(s.shape[1:]) for s in states]
    return BackboneOutput(hidden=out, states=states), new_kv


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def forward(z, cfg: BackboneConfig, params: Mapping[str, TensorNode],
            hooks: Mapping[int, Hook] | None = None) -> BackboneOutput:
    """Full causal pass over [T, d] or [B, T, d] embeddings."""
    out, _ = _run(z, cfg, params, None, hooks)
    return out


def extend(z_new, cache: KvCache, cfg: BackboneConfig, params: Mapping[str, TensorNode],
           hooks: Mapping[int, Hook] | None = None) -> BackboneOutput:
    """Run new positions against the cached prefix and append their keys/values."""
    if cache.n_layers != cfg.n_layers:
        raise ConfigError(f"cache has {cache.n_layers} layers, backbone has {cfg.n_layers}")
    out, new_kv = _run(z_new, cfg, params, cache, hooks)
    for i, (k, v) in enumerate(new_kv):
        cache.keys[i] = k
        cache.values[i] = v
    n_new = as_node(z_new).shape[-2]
    cache.filled_len += n_new
    log.debug("kv cache extended by %d to %d positions", n_new, cache.filled_len)
    return out


def generate_step(token_embedding, cache: KvCache, cfg: BackboneConfig,
                  params: Mapping[str, TensorNode],
                  hooks: Mapping[int, Hook] | None = None) -> TensorNode:
    """One position: [1, d] (or [B, 1, d]) in, hidden state for that position out."""
    token = as_node(token_embedding)
    if token.shape[-2] != 1:
        raise DimensionError(f"generate_step takes exactly one position, got {token.shape}")
    return extend(token, cache, cfg, params, hooks).hidden
