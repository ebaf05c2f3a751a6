"""Full forecaster: tokenizer -> causal backbone -> residual quantile head, plus the
future aggregator used only for training.

Parameters live in one ordered ``ModelParams`` store with dotted names
(``tokenizer.W1``, ``backbone.blocks.0.wq``, ``aggregator.kernel``, ``head.W_out``).
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping

import numpy as np

from . import backbone as bb
from .backbone import BackboneConfig, BackboneOutput, Hook, KvCache
from .config import (
    AGGREGATOR_KINDS, DEFAULT_HORIZON, DEFAULT_PRESET, GROUNDING_MODES, QUANTILE_LEVELS,
    TOKENIZER_KINDS,
)
from .errors import ConfigError
from .objectives import AggregatorParams, QuantileHeadParams, apply_head, init_aggregator, init_head
from .tensor import TensorNode, parameter, tensor
from .tokenizer import LinearEmbedParams, SiGluParams, embed_linear, embed_series, init_linear, init_siglu

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig
    horizon: int = DEFAULT_HORIZON
    quantiles: tuple[float, ...] = QUANTILE_LEVELS
    tokenizer: str = "siglu"
    d_ff: int | None = None          # tokenizer sine width; defaults to d_intermediate
    glu_width: int | None = None     # GLU hidden width; defaults to d_ff
    head_hidden: int | None = None   # defaults to d_model
    aggregator: str = "depthwise"
    grounding: str = "synced"

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        q = tuple(float(v) for v in self.quantiles)
        if not q or any(not 0.0 < v < 1.0 for v in q) or any(a >= b for a, b in zip(q, q[1:])):
            raise ConfigError(f"quantile levels must be strictly increasing in (0, 1): {q}")
        object.__setattr__(self, "quantiles", q)
        if self.tokenizer not in TOKENIZER_KINDS:
            raise ConfigError(f"unknown tokenizer '{self.tokenizer}' (choose from {TOKENIZER_KINDS})")
        if self.aggregator not in AGGREGATOR_KINDS:
            raise ConfigError(f"unknown aggregator '{self.aggregator}' (choose from {AGGREGATOR_KINDS})")
        if self.grounding not in GROUNDING_MODES:
            raise ConfigError(f"unknown grounding mode '{self.grounding}' (choose from {GROUNDING_MODES})")

    @property
    def d_model(self) -> int:
        return self.backbone.d_model

    @property
    def tokenizer_width(self) -> int:
        return self.d_ff or self.backbone.d_intermediate

    @property
    def tokenizer_glu_width(self) -> int:
        return self.glu_width or self.tokenizer_width

    @property
    def head_width(self) -> int:
        return self.head_hidden or self.backbone.d_model

    @property
    def median_index(self) -> int:
        return int(np.argmin(np.abs(np.asarray(self.quantiles) - 0.5)))

    @classmethod
    def from_preset(cls, preset: str = DEFAULT_PRESET, **kwargs) -> "ModelConfig":
        return cls(backbone=BackboneConfig.from_preset(preset), **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantiles"] = list(self.quantiles)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        data = dict(data)
        data["backbone"] = BackboneConfig(**data["backbone"])
        data["quantiles"] = tuple(data.get("quantiles", QUANTILE_LEVELS))
        return cls(**data)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class ModelParams:
    """Ordered name -> TensorNode store."""

    nodes: dict[str, TensorNode] = field(default_factory=dict)

    def __getitem__(self, name: str) -> TensorNode:
        return self.nodes[name]

    def __contains__(self, name: str) -> bool:
        return name in self.nodes

    def __iter__(self) -> Iterator[str]:
        return iter(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def items(self):
        return self.nodes.items()

    def group(self, prefix: str) -> dict[str, TensorNode]:
        """Entries under ``prefix.`` keyed by their name relative to it."""
        p = prefix.rstrip(".") + "."
        return {k[len(p):]: v for k, v in self.nodes.items() if k.startswith(p)}

    def trainable(self) -> dict[str, TensorNode]:
        return {k: v for k, v in self.nodes.items() if v.requires_grad}

    def zero_grad(self) -> None:
        for node in self.nodes.values():
            node.zero_grad()

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.nodes.items()}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray],
                    frozen_prefixes: tuple[str, ...] = ("head_frozen.",)) -> "ModelParams":
        nodes = {}
        for name, arr in arrays.items():
            if name.startswith(frozen_prefixes):
                nodes[name] = tensor(np.array(arr, dtype=np.float64))
            else:
                nodes[name] = parameter(arr)
        return cls(nodes)

    def count(self, trainable_only: bool = True) -> int:
        source = self.trainable() if trainable_only else self.nodes
        return int(sum(v.size for v in source.values()))


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded initialization of every group; each group draws from its own stream."""
    streams = np.random.SeedSequence(seed).spawn(4)
    rngs = [np.random.default_rng(s) for s in streams]
    arrays: dict[str, np.ndarray] = {}
    d = cfg.d_model
    if cfg.tokenizer == "siglu":
        tok = init_siglu(d, cfg.tokenizer_width, cfg.tokenizer_glu_width, rngs[0])
    else:
        tok = init_linear(d, rngs[0])
    arrays.update({f"tokenizer.{k}": v for k, v in tok.items()})
    arrays.update({f"backbone.{k}": v for k, v in bb.init_backbone(cfg.backbone, rngs[1]).items()})
    arrays.update({f"aggregator.{k}": v
                   for k, v in init_aggregator(cfg.aggregator, d, cfg.horizon, rngs[2]).items()})
    head = init_head(d, cfg.head_width, cfg.horizon, len(cfg.quantiles), rngs[3])
    arrays.update({f"head.{k}": v for k, v in head.items()})
    if cfg.grounding == "frozen_at_init":
        arrays.update({f"head_frozen.{k}": v.copy() for k, v in head.items()})
    return ModelParams.from_arrays(arrays)


def count_parameters(cfg: ModelConfig) -> int:
    """Trainable parameter count computed from shapes alone."""
    b = cfg.backbone
    d, di = b.d_model, b.d_intermediate
    if cfg.tokenizer == "siglu":
        f, g = cfg.tokenizer_width, cfg.tokenizer_glu_width
        tok = f + f + 2 * f * g + g * d
    else:
        tok = 2 * d
    block = 4 * d + 4 * d * d + 3 * d * di
    backbone = b.n_layers * block + 2 * d
    kernel = {"depthwise": cfg.horizon * d, "linear": cfg.horizon, "avgpool": 0}[cfg.aggregator]
    agg = kernel + 2 * d * d + 2 * d
    out = cfg.horizon * len(cfg.quantiles)
    hh = cfg.head_width
    head = d * hh + hh + hh * out + out + d * out
    return tok + backbone + agg + head


class EidosModel:
    """Binds a ModelConfig to a ModelParams store."""

    def __init__(self, cfg: ModelConfig, params: ModelParams):
        self.cfg = cfg
        self.params = params
        missing = [k for k in ("head.W_in", "backbone.lnf_g") if k not in params]
        if missing:
            raise ConfigError(f"parameter store is missing {missing}")

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "EidosModel":
        model = cls(cfg, init_params(cfg, seed))
        log.debug("initialized model %s with %d trainable parameters", cfg.hash(), model.params.count())
        return model

    # -- parameter views -----------------------------------------------------
    def backbone_params(self) -> dict[str, TensorNode]:
        return self.params.group("backbone")

    def head_params(self) -> QuantileHeadParams:
        return QuantileHeadParams.from_group(self.params.group("head"), self.cfg.quantiles)

    def aggregator(self) -> AggregatorParams:
        return AggregatorParams.from_group(self.params.group("aggregator"), self.cfg.aggregator,
                                           self.cfg.horizon)

    def grounding_head(self) -> QuantileHeadParams:
        """Gradient-blocked decoder for the grounding loss."""
        if self.cfg.grounding == "frozen_at_init":
            return QuantileHeadParams.from_group(self.params.group("head_frozen"),
                                                 self.cfg.quantiles).frozen()
        return self.head_params().frozen()

    # -- forward pieces ------------------------------------------------------
    def embed(self, x) -> TensorNode:
        group = self.params.group("tokenizer")
        if self.cfg.tokenizer == "siglu":
            return embed_series(x, SiGluParams.from_group(group))
        return embed_linear(x, LinearEmbedParams.from_group(group))

    def backbone(self, z, hooks: Mapping[int, Hook] | None = None) -> BackboneOutput:
        return bb.forward(z, self.cfg.backbone, self.backbone_params(), hooks)

    def head(self, h) -> TensorNode:
        return apply_head(h, self.head_params(), self.cfg.horizon)

    def new_cache(self) -> KvCache:
        return KvCache.empty(self.cfg.backbone.n_layers)

    def extend(self, z_new, cache: KvCache, hooks: Mapping[int, Hook] | None = None) -> BackboneOutput:
        return bb.extend(z_new, cache, self.cfg.backbone, self.backbone_params(), hooks)

    def generate_step(self, token_embedding, cache: KvCache,
                      hooks: Mapping[int, Hook] | None = None) -> TensorNode:
        return bb.generate_step(token_embedding, cache, self.cfg.backbone, self.backbone_params(), hooks)

    def hidden_states(self, x, hooks: Mapping[int, Hook] | None = None) -> BackboneOutput:
        """Embed then run the backbone; ``states[0]`` is the tokenizer output."""
        return self.backbone(self.embed(x), hooks)
