"""
Representation analysis.

Layer-wise linear separability (LDR) of synthetic concept pairs, and latent
steering: a median-difference concept direction injected into one layer's
hidden states, scaled by the layer's average hidden-state norm.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import spearmanr
from tqdm import tqdm

from .config import DIRECTION_FLOOR, LDR_EPS, PROBE_DEFAULTS, max_workers
from .datagen import znorm
from .errors import ConfigError, DegenerateDirectionError, DimensionError
from .forecast import ForecastResult, add_direction_hook, forecast
from .model import EidosModel
from .tensor import no_grad

log = logging.getLogger(__name__)

PROBE_KINDS = ("trend", "periodicity")


# ---------------------------------------------------------------------------
# Probe datasets
# ---------------------------------------------------------------------------

@dataclass
class ProbeDataset:
    kind: str
    class0: np.ndarray        # [n, L]
    class1: np.ndarray        # [n, L]
    purpose: str = "probe"

    def __post_init__(self):
        if self.class0.shape != self.class1.shape or self.class0.ndim != 2:
            raise DimensionError(f"unbalanced probe classes {self.class0.shape} vs {self.class1.shape}")

    @property
    def count(self) -> int:
        return int(self.class0.shape[0])

    @property
    def length(self) -> int:
        return int(self.class0.shape[1])


def _ramp(rng, L, slope_range, sign):
    s = rng.uniform(*slope_range)
    return sign * s * np.arange(L) / (L - 1)


def _sine(rng, L, freq_range):
    f = rng.uniform(*freq_range)
    return np.sin(2.0 * np.pi * f * np.arange(L) / L + rng.uniform(0.0, 2.0 * np.pi))


def make_probe_dataset(kind: str, count: int = PROBE_DEFAULTS["count"],
                       length: int = PROBE_DEFAULTS["length"],
                       sigma: float = PROBE_DEFAULTS["sigma"], seed: int = PROBE_DEFAULTS["seed"],
                       slope_range: Sequence[float] = PROBE_DEFAULTS["slope_range"],
                       freq_range: Sequence[float] = PROBE_DEFAULTS["freq_range"],
                       purpose: str = "probe") -> ProbeDataset:
    """Paired concept classes.

    probe:  trend = downward vs upward ramps; periodicity = white noise vs sines.
    steer:  trend = zero slope vs upward ramps; periodicity = white noise vs sines.
    Every series gets additive N(0, sigma^2) noise except the white-noise class,
    which is unit-variance noise.
    """
    if kind not in PROBE_KINDS:
        raise ConfigError(f"unknown probe kind '{kind}' (choose from {PROBE_KINDS})")
    if purpose not in ("probe", "steer"):
        raise ConfigError(f"unknown probe purpose '{purpose}'")
    if count < 1 or length < 2:
        raise ConfigError(f"probe dataset needs count >= 1 and length >= 2, got {count}, {length}")

    classes = []
    for label in (0, 1):
        rows = np.empty((count, length))
        for i in range(count):
            rng = np.random.default_rng([int(seed), label, i])
            if kind == "trend":
                if label == 1:
                    y = _ramp(rng, length, slope_range, 1.0)
                elif purpose == "probe":
                    y = _ramp(rng, length, slope_range, -1.0)
                else:
                    y = np.zeros(length)
                y = y + rng.normal(0.0, sigma, length)
            elif label == 1:
                y = _sine(rng, length, freq_range) + rng.normal(0.0, sigma, length)
            else:
                y = rng.normal(0.0, 1.0, length)
            rows[i] = y
        classes.append(rows)
    return ProbeDataset(kind, classes[0], classes[1], purpose)


# ---------------------------------------------------------------------------
# Hidden states
# ---------------------------------------------------------------------------

def _check_layer(model: EidosModel, layer: int) -> int:
    n = model.cfg.backbone.n_layers
    if not 0 <= layer <= n:
        raise ConfigError(f"layer {layer} out of range [0, {n}]")
    return layer


def _batch_states(model: EidosModel, batch: np.ndarray) -> np.ndarray:
    """[B, L] raw series -> [n_layers + 1, B, d] last-position states."""
    xn = np.stack([znorm(row)[0] for row in batch])
    with no_grad():
        out = model.hidden_states(xn)
    return np.stack([s.data[:, -1, :] for s in out.states])


def extract_all_states(model: EidosModel, series: np.ndarray, batch: int = PROBE_DEFAULTS["batch"],
                       workers: int | None = None, progress: bool = False) -> np.ndarray:
    """Last-position states at every layer: [n_layers + 1, n, d]."""
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    chunks = [series[i:i + batch] for i in range(0, len(series), batch)]
    workers = workers or max_workers()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(tqdm(pool.map(lambda c: _batch_states(model, c), chunks), total=len(chunks),
                          desc="states", leave=False, disable=not progress))
    return np.concatenate(parts, axis=1)


def extract_states(model: EidosModel, series: np.ndarray, layer: int,
                   batch: int = PROBE_DEFAULTS["batch"], workers: int | None = None) -> np.ndarray:
    """[n, d] last-position hidden states at ``layer`` (0 = tokenizer output)."""
    _check_layer(model, layer)
    return extract_all_states(model, series, batch, workers)[layer]


def ldr(class0: np.ndarray, class1: np.ndarray, eps: float = LDR_EPS) -> float:
    """||mu1 - mu0||^2 / (trace var1 + trace var0 + eps)."""
    a = np.asarray(class0, dtype=np.float64)
    b = np.asarray(class1, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise ConfigError("ldr needs both classes non-empty")
    between = float(np.sum((b.mean(axis=0) - a.mean(axis=0)) ** 2))
    within = float(b.var(axis=0).sum() + a.var(axis=0).sum())
    return between / (within + eps)


def probe_sweep(model: EidosModel, dataset: ProbeDataset, control: EidosModel | None = None,
                eps: float = LDR_EPS, batch: int = PROBE_DEFAULTS["batch"],
                progress: bool = True) -> pd.DataFrame:
    """LDR at every layer; ``control`` (usually a random-init model) adds a second column."""
    def curve(m: EidosModel) -> list[float]:
        s0 = extract_all_states(m, dataset.class0, batch, progress=progress)
        s1 = extract_all_states(m, dataset.class1, batch, progress=progress)
        return [ldr(s0[i], s1[i], eps) for i in range(len(s0))]

    df = pd.DataFrame({"layer": np.arange(model.cfg.backbone.n_layers + 1), "ldr": curve(model)})
    if control is not None:
        df["ldr_random"] = curve(control)
    log.info("Probe %s: final-layer LDR %.4g", dataset.kind, df["ldr"].iloc[-1])
    return df


# ---------------------------------------------------------------------------
# Steering
# ---------------------------------------------------------------------------

@dataclass
class ConceptDirection:
    layer: int
    v_unit: np.ndarray
    medians: tuple[np.ndarray, np.ndarray]
    energy: float

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.v_unit)) - 1.0) > 1e-9:
            raise DegenerateDirectionError("concept direction is not unit length")

    def injection(self, alpha: float) -> np.ndarray:
        return (alpha * self.energy) * self.v_unit


def extract_direction(model: EidosModel, dataset: ProbeDataset, layer: int,
                      batch: int = PROBE_DEFAULTS["batch"]) -> ConceptDirection:
    """Unit vector from the class-0 median state to the class-1 median state."""
    _check_layer(model, layer)
    s0 = extract_states(model, dataset.class0, layer, batch)
    s1 = extract_states(model, dataset.class1, layer, batch)
    med0 = np.median(s0, axis=0)
    med1 = np.median(s1, axis=0)
    diff = med1 - med0
    norm = float(np.linalg.norm(diff))
    if norm < DIRECTION_FLOOR:
        raise DegenerateDirectionError(f"median difference norm {norm:.3g} at layer {layer}")
    energy = float(np.linalg.norm(np.concatenate([s0, s1]), axis=1).mean())
    log.debug("direction at layer %d: |diff| %.4g, energy %.4g", layer, norm, energy)
    return ConceptDirection(layer, diff / norm, (med0, med1), energy)


def steer_forecast(model: EidosModel, context, H: int, direction: ConceptDirection,
                   alpha: float, block_l: int | None = None, positions: str = "all",
                   use_cache: bool = True) -> tuple[ForecastResult, ForecastResult]:
    """(baseline, steered) forecasts; the injection applies to the context pass only."""
    _check_layer(model, direction.layer)
    if direction.v_unit.shape[-1] != model.cfg.d_model:
        raise ConfigError(f"direction width {direction.v_unit.shape[-1]} != d_model {model.cfg.d_model}")
    if positions not in ("all", "last"):
        raise ConfigError(f"positions must be 'all' or 'last', got '{positions}'")
    baseline = forecast(context, H, model, block_l, use_cache=use_cache)
    hook = add_direction_hook(direction.injection(alpha), positions)
    steered = forecast(context, H, model, block_l, use_cache=use_cache,
                       prefill_hooks={direction.layer: hook})
    return baseline, steered


def response(kind: str, median: np.ndarray) -> float:
    """Scalar the steering concept should move: fitted slope, or forecast std for periodicity."""
    y = np.asarray(median, dtype=np.float64)
    if kind == "trend":
        return float(np.polyfit(np.arange(y.size), y, 1)[0]) if y.size > 1 else 0.0
    return float(y.std())


def alpha_sweep(model: EidosModel, contexts: np.ndarray, H: int, direction: ConceptDirection,
                alphas: Sequence[float], kind: str = "trend", block_l: int | None = None,
                positions: str = "all", progress: bool = True) -> tuple[pd.DataFrame, float]:
    """Response per (alpha, context) and the Spearman correlation of the mean response with alpha."""
    rows = []
    contexts = np.atleast_2d(contexts)
    for alpha in tqdm(alphas, desc="steer", leave=False, disable=not progress):
        for i, ctx in enumerate(contexts):
            base, steered = steer_forecast(model, ctx, H, direction, float(alpha), block_l, positions)
            rows.append({
                "alpha": float(alpha), "context": i,
                "response": response(kind, steered.median),
                "baseline_response": response(kind, base.median),
            })
    trace = pd.DataFrame(rows)
    means = trace.groupby("alpha")["response"].mean()
    rho = float(spearmanr(means.index.to_numpy(), means.to_numpy())[0]) if len(means) > 1 else float("nan")
    log.info("Steering %s at layer %d: Spearman rho %.3f over %d alphas", kind, direction.layer, rho, len(means))
    return trace, rho
