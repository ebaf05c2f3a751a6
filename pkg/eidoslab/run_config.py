"""
Run configuration: nested sections with documented defaults.

Precedence is defaults < JSON file < command-line overrides. Unknown keys are
rejected with the dotted path of the offending key. The resolved configuration is
written next to every artifact it produced (``resolved_config.json``).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .backbone import BackboneConfig
from .config import (
    CORPUS, DEFAULT_HORIZON, DEFAULT_PRESET, DEFAULT_STEER_ALPHAS, GAUSSIAN_LEVELS,
    IMPULSE_LEVELS, LOSS_WEIGHTS, NOISE_SEED, OPTIM_DEFAULTS, PROBE_DEFAULTS,
    QUANTILE_LEVELS, STEER_ALPHAS, SYNTH_KINDS, TRAIN_DEFAULTS, TSMIXUP,
)
from .errors import ConfigError
from .model import ModelConfig
from .objectives import LossWeights

log = logging.getLogger(__name__)

RESOLVED_FILENAME = "resolved_config.json"


@dataclass
class ModelSection:
    preset: str = DEFAULT_PRESET
    n_layers: int | None = None          # explicit overrides of the preset extents
    d_model: int | None = None
    d_intermediate: int | None = None
    n_heads: int | None = None
    horizon: int = DEFAULT_HORIZON
    quantiles: list[float] = field(default_factory=lambda: list(QUANTILE_LEVELS))
    tokenizer: str = "siglu"
    d_ff: int | None = None
    glu_width: int | None = None
    head_hidden: int | None = None
    aggregator: str = "depthwise"
    grounding: str = "synced"


@dataclass
class LossSection:
    preset: str | None = None            # full / no_grounding / pred_only; wins over the lambdas
    lambda_pred: float = LOSS_WEIGHTS["lambda_pred"]
    lambda_latent: float = LOSS_WEIGHTS["lambda_latent"]
    lambda_gnd: float = LOSS_WEIGHTS["lambda_gnd"]


@dataclass
class OptimSection:
    lr_peak: float = OPTIM_DEFAULTS["lr_peak"]
    beta1: float = OPTIM_DEFAULTS["beta1"]
    beta2: float = OPTIM_DEFAULTS["beta2"]
    weight_decay: float = OPTIM_DEFAULTS["weight_decay"]
    eps: float = OPTIM_DEFAULTS["eps"]
    warmup_frac: float = OPTIM_DEFAULTS["warmup_frac"]
    clip_norm: float = OPTIM_DEFAULTS["clip_norm"]


@dataclass
class TrainSection:
    total_steps: int = TRAIN_DEFAULTS["total_steps"]
    batch_size: int = TRAIN_DEFAULTS["batch_size"]
    micro_batch: int = TRAIN_DEFAULTS["micro_batch"]
    context_length: int = TRAIN_DEFAULTS["context_length"]
    log_every: int = TRAIN_DEFAULTS["log_every"]
    checkpoint_every: int = TRAIN_DEFAULTS["checkpoint_every"]
    fixed_batch: bool = False            # reuse the first batch every step (overfit check)


@dataclass
class DataSection:
    """Training corpus. ``sources`` entries are {"kind" or "path", "count", "length", "weight"}."""

    kind: str = "sine+trend"
    count: int = 256
    length: int = 1024
    sources: list[dict] = field(default_factory=list)
    tsmixup_count: int = 0
    tsmixup_k_max: int = TSMIXUP["k_max"]
    tsmixup_alpha: float = TSMIXUP["alpha"]
    sigma: float = CORPUS["sigma"]


@dataclass
class EvalSection:
    kind: str = "sine"
    count: int = 32
    length: int = 640
    context_length: int = 512
    horizon: int = DEFAULT_HORIZON
    block: int | None = None             # defaults to the model horizon
    holdout_seed: int = 1_000
    sort_quantiles: bool = False
    use_cache: bool = True
    excel: bool = True


@dataclass
class NoiseSection:
    kind: str = "gaussian"
    levels: list[float] | None = None    # defaults to the per-kind grid
    seed: int = NOISE_SEED

    def resolved_levels(self) -> list[float]:
        if self.levels is not None:
            return [float(v) for v in self.levels]
        return list(GAUSSIAN_LEVELS if self.kind == "gaussian" else IMPULSE_LEVELS)


@dataclass
class ProbeSection:
    kind: str = "trend"
    count: int = PROBE_DEFAULTS["count"]
    length: int = PROBE_DEFAULTS["length"]
    sigma: float = PROBE_DEFAULTS["sigma"]
    slope_range: list[float] = field(default_factory=lambda: list(PROBE_DEFAULTS["slope_range"]))
    freq_range: list[float] = field(default_factory=lambda: list(PROBE_DEFAULTS["freq_range"]))
    seed: int = PROBE_DEFAULTS["seed"]
    batch: int = PROBE_DEFAULTS["batch"]
    layer: int | None = None             # steering layer; defaults to the final layer
    alphas: list[float] = field(default_factory=lambda: list(DEFAULT_STEER_ALPHAS))
    sweep_alphas: list[float] = field(default_factory=lambda: list(STEER_ALPHAS))
    positions: str = "all"
    horizon: int = DEFAULT_HORIZON
    context_length: int = 256


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    optim: OptimSection = field(default_factory=OptimSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    probe: ProbeSection = field(default_factory=ProbeSection)

    # -- derived objects -----------------------------------------------------
    def backbone_config(self) -> BackboneConfig:
        m = self.model
        overrides = {k: getattr(m, k) for k in ("n_layers", "d_model", "d_intermediate", "n_heads")
                     if getattr(m, k) is not None}
        return BackboneConfig.from_preset(m.preset, **overrides)

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(
            backbone=self.backbone_config(), horizon=m.horizon, quantiles=tuple(m.quantiles),
            tokenizer=m.tokenizer, d_ff=m.d_ff, glu_width=m.glu_width, head_hidden=m.head_hidden,
            aggregator=m.aggregator, grounding=m.grounding,
        )

    def loss_weights(self) -> LossWeights:
        if self.loss.preset:
            return LossWeights.from_preset(self.loss.preset)
        return LossWeights(self.loss.lambda_latent, self.loss.lambda_gnd, self.loss.lambda_pred)

    def validate(self) -> "RunConfig":
        self.model_config()
        self.loss_weights()
        t = self.train
        if t.total_steps < 1 or t.batch_size < 1 or t.micro_batch < 1:
            raise ConfigError(f"train extents must be positive: {t}")
        if t.context_length <= self.model.horizon:
            raise ConfigError(f"train.context_length ({t.context_length}) must exceed model.horizon "
                              f"({self.model.horizon})")
        if self.data.kind not in SYNTH_KINDS:
            raise ConfigError(f"data.kind '{self.data.kind}' not in {SYNTH_KINDS}")
        if self.noise.kind not in ("gaussian", "impulse"):
            raise ConfigError(f"noise.kind must be gaussian or impulse, got '{self.noise.kind}'")
        if self.probe.kind not in ("trend", "periodicity"):
            raise ConfigError(f"probe.kind must be trend or periodicity, got '{self.probe.kind}'")
        if self.probe.positions not in ("all", "last"):
            raise ConfigError(f"probe.positions must be all or last, got '{self.probe.positions}'")
        return self

    # -- serialization -------------------------------------------------------
    def resolved_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """sha256 over everything except the output directory."""
        d = self.resolved_dict()
        d.pop("out", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def model_hash(self) -> str:
        return self.model_config().hash()

    def save(self, folder: Path | str) -> Path:
        folder = Path(folder)
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / RESOLVED_FILENAME
        path.write_text(json.dumps(self.resolved_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path


# ---------------------------------------------------------------------------
# Loading and merging
# ---------------------------------------------------------------------------


def _merge(base: dict, incoming: Mapping[str, Any], path: str = "") -> None:
    for key, value in incoming.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"'{where}' must be an object, got {type(value).__name__}")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value


def _coerce(value: Any, hint: Any, where: str) -> Any:
    """Check ``value`` against a field annotation; ints widen to float, integral floats narrow to int."""
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{where}' must be a list, got {type(value).__name__}")
        (item,) = typing.get_args(hint) or (Any,)
        return [_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
    if hint is Any:
        return value
    if hint is bool:
        if isinstance(value, bool):
            return value
    elif hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif hint is str:
        if isinstance(value, str):
            return value
    elif origin is dict or hint is dict:
        if isinstance(value, dict):
            return value
    else:
        return value
    raise ConfigError(f"'{where}' must be {getattr(hint, '__name__', hint)}, got {value!r}")


def _build(cls: type, values: Mapping[str, Any], path: str):
    hints = typing.get_type_hints(cls)
    return cls(**{k: _coerce(v, hints[k], f"{path}{k}") for k, v in values.items()})


def from_dict(data: Mapping[str, Any]) -> RunConfig:
    """Build a RunConfig from a (possibly partial) nested dict; badly typed values raise ConfigError."""
    merged = asdict(RunConfig())
    _merge(merged, data)
    sections = {}
    hints = typing.get_type_hints(RunConfig)
    for f in dataclasses.fields(RunConfig):
        value = merged[f.name]
        if dataclasses.is_dataclass(hints[f.name]):
            sections[f.name] = _build(hints[f.name], value, f.name + ".")
        else:
            sections[f.name] = _coerce(value, hints[f.name], f.name)
    return RunConfig(**sections)


def apply_overrides(data: dict, overrides: Mapping[str, Any]) -> dict:
    """Set dotted keys (``train.total_steps``) on a nested dict; ``None`` values are skipped."""
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"'{dotted}' does not address a config section")
        node[parts[-1]] = value
    return data


def load_run_config(path: Path | str | None = None,
                    overrides: Mapping[str, Any] | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    apply_overrides(data, overrides or {})
    cfg = from_dict(data).validate()
    log.debug("Resolved config %s (model %s)", cfg.config_hash(), cfg.model_hash())
    return cfg
