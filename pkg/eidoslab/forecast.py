"""
Autoregressive probabilistic forecasting.

The context is z-scored, run through the model once (prefill), and the head at the
last position emits a block of quantiles. For longer horizons the block's medians
(normalized scale) are appended and decoding continues from the KV cache. Results
are truncated to the horizon and denormalized.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd

from .backbone import Hook
from .datagen import denorm, znorm
from .errors import ConfigError, InputError
from .model import EidosModel
from .tensor import TensorNode, concat, no_grad

log = logging.getLogger(__name__)


@dataclass
class ForecastResult:
    quantiles: np.ndarray              # [H, |Q|], original scale
    levels: tuple[float, ...]
    norm_stats: tuple[float, float]    # (mean, std) of the context
    horizon: int
    crossing_rate: float = 0.0         # before any post-hoc sort
    blocks: int = 1

    def __post_init__(self):
        if self.horizon < 1 or self.quantiles.shape != (self.horizon, len(self.levels)):
            raise ConfigError(f"forecast shape {self.quantiles.shape} vs horizon {self.horizon}")
        if not np.all(np.isfinite(self.quantiles)):
            raise InputError("forecast produced non-finite quantiles")

    @property
    def median(self) -> np.ndarray:
        idx = int(np.argmin(np.abs(np.asarray(self.levels) - 0.5)))
        return self.quantiles[:, idx]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.quantiles, columns=[f"q{q:g}" for q in self.levels])
        df.insert(0, "step", np.arange(1, self.horizon + 1))
        return df


def crossing_rate(q: np.ndarray) -> float:
    """Share of adjacent quantile pairs that are out of order."""
    q = np.asarray(q)
    if q.shape[-1] < 2:
        return 0.0
    return float((np.diff(q, axis=-1) < 0).mean())


def sort_quantiles(q: np.ndarray) -> np.ndarray:
    return np.sort(np.asarray(q), axis=-1)


def _validate_context(context) -> np.ndarray:
    x = np.asarray(context, dtype=np.float64).reshape(-1)
    if x.size < 1:
        raise InputError("forecast needs a non-empty context")
    if not np.all(np.isfinite(x)):
        raise InputError("forecast context contains non-finite values")
    return x


def _limit_hook(hook: Hook, n_rows: int) -> Hook:
    """Apply ``hook`` to the first ``n_rows`` positions only."""
    def wrapped(x: TensorNode) -> TensorNode:
        if x.shape[-2] <= n_rows:
            return hook(x)
        head = hook(x[(Ellipsis, slice(0, n_rows), slice(None))])
        return concat([head, x[(Ellipsis, slice(n_rows, None), slice(None))]], axis=-2)
    return wrapped


def forecast(context, H: int, model: EidosModel, block_l: int | None = None,
             use_cache: bool = True, sort: bool = False,
             prefill_hooks: Mapping[int, Hook] | None = None) -> ForecastResult:
    """Quantile forecast of ``H`` steps after ``context``.

    ``prefill_hooks`` modify layer activations of the context positions only
    (first generation block); fed-back positions always run unmodified.
    """
    if H < 1:
        raise ConfigError(f"horizon must be >= 1, got {H}")
    l = block_l or model.cfg.horizon
    if not 1 <= l <= model.cfg.horizon:
        raise ConfigError(f"block length {l} must be in [1, {model.cfg.horizon}]")
    x = _validate_context(context)
    xn, mu, sd = znorm(x)
    mi = model.cfg.median_index
    hooks = dict(prefill_hooks or {})

    blocks: list[np.ndarray] = []
    with no_grad():
        if use_cache:
            cache = model.new_cache()
            h_last = model.extend(model.embed(xn), cache, hooks).hidden.data[-1]
        else:
            seq = xn
            h_last = model.backbone(model.embed(seq), hooks).hidden.data[-1]
        while True:
            q = model.head(h_last[None, :]).data[0][:l]
            blocks.append(q)
            if len(blocks) * l >= H:
                break
            fed = q[:, mi]
            if use_cache:
                h_last = model.extend(model.embed(fed), cache).hidden.data[-1]
            else:
                seq = np.concatenate([seq, fed])
                limited = {k: _limit_hook(v, xn.size) for k, v in hooks.items()}
                h_last = model.backbone(model.embed(seq), limited).hidden.data[-1]

    qn = np.concatenate(blocks, axis=0)[:H]
    rate = crossing_rate(qn)
    if sort:
        qn = sort_quantiles(qn)
    log.debug("forecast: %d steps in %d block(s), crossing rate %.3f", H, len(blocks), rate)
    return ForecastResult(denorm(qn, mu, sd), model.cfg.quantiles, (mu, sd), H, rate, len(blocks))


def add_direction_hook(vector: np.ndarray, positions: str = "all") -> Hook:
    """Hook adding ``vector`` to every position, or only the last one."""
    vec = np.asarray(vector, dtype=np.float64)

    def hook(x: TensorNode) -> TensorNode:
        if x.shape[-1] != vec.shape[-1]:
            raise ConfigError(f"steering vector width {vec.shape[-1]} != hidden width {x.shape[-1]}")
        if positions == "all":
            return x + vec
        delta = np.zeros(x.shape)
        delta[..., -1, :] = vec
        return x + delta

    return hook
