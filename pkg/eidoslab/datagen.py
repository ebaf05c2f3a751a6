"""
Synthetic series generation, TSMixup augmentation, instance normalization and
noise injection.

Every generator is deterministic under its seed. Corpus generation derives one
independent stream per series from (seed, index), so results do not depend on
the worker count.
"""
from __future__ import annotations

import graphlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .config import (
    ACTIVATIONS, CAUKER, CORPUS, IMPULSE_MAGNITUDE, NOISE_SEED, PRIMITIVE_KINDS, TSMIXUP,
    ZNORM_EPS, max_workers,
)
from .errors import ConfigError, ContractError, GraphError, InputError, WindowError

log = logging.getLogger(__name__)


@dataclass
class SeriesRecord:
    id: str
    freq: str
    target: np.ndarray
    season_m: int = 1

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64).reshape(-1)
        self.season_m = int(self.season_m)
        if self.season_m < 1:
            raise ContractError(f"{self.id}: season_m must be >= 1, got {self.season_m}")
        if not np.all(np.isfinite(self.target)):
            raise InputError(f"{self.id}: target contains non-finite values")

    def __len__(self) -> int:
        return int(self.target.size)


def series_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream for series ``index`` under ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


# ---------------------------------------------------------------------------
# Primitive signals
# ---------------------------------------------------------------------------

def _resolve_freq(params: Mapping, T: int) -> tuple[float, int]:
    if "period" in params:
        period = float(params["period"])
        if period <= 0:
            raise ConfigError(f"period must be > 0, got {period}")
        return T / period, max(1, int(round(period)))
    f = float(params.get("freq", 1.0))
    return f, max(1, int(round(T / f))) if f > 0 else 1


def gen_primitive(kind: str, params: Mapping | None, T: int, seed: int, index: int = 0,
                  series_id: str | None = None, freq_tag: str = CORPUS["freq_tag"]) -> SeriesRecord:
    """One deterministic primitive series.

    params: ``freq`` (cycles per series) or ``period`` (steps), ``amplitude``,
    ``slope``, ``intercept``, ``sigma``. The ramp is ``slope * t / (T - 1)``, so
    its last value minus its first equals ``slope`` whatever the length.
    """
    if kind not in PRIMITIVE_KINDS:
        raise ConfigError(f"unknown primitive kind '{kind}' (choose from {PRIMITIVE_KINDS})")
    if T < 2:
        raise WindowError(f"primitive series need T >= 2, got {T}")
    params = dict(params or {})
    rng = series_rng(seed, index)
    t = np.arange(T, dtype=np.float64)
    y = np.full(T, float(params.get("intercept", 0.0)))
    season_m = 1

    if kind in ("sine", "sine+trend"):
        f, season_m = _resolve_freq(params, T)
        phase = float(params.get("phase", 0.0))
        y += float(params.get("amplitude", 1.0)) * np.sin(2.0 * np.pi * f * t / T + phase)
    if kind in ("trend", "sine+trend"):
        y += float(params.get("slope", 1.0)) * t / (T - 1)

    sigma = float(params.get("sigma", 1.0 if kind == "noise" else 0.0))
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if sigma > 0:
        y = y + rng.normal(0.0, sigma, size=T)
    return SeriesRecord(series_id or f"{kind}-{seed}-{index}", freq_tag, y, season_m)


def sample_primitive_params(kind: str, rng: np.random.Generator,
                            ranges: Mapping = CORPUS) -> dict:
    """Draw per-series parameters for corpus generation."""
    params: dict = {"sigma": float(ranges["sigma"])}
    if kind in ("sine", "sine+trend"):
        lo, hi = ranges["period_range"]
        params["period"] = int(rng.integers(lo, hi + 1))
        params["amplitude"] = float(rng.uniform(*ranges["amplitude_range"]))
        params["phase"] = float(rng.uniform(0.0, 2.0 * np.pi))
    if kind in ("trend", "sine+trend"):
        params["slope"] = float(rng.uniform(*ranges["slope_range"]))
    if kind == "noise":
        params["sigma"] = 1.0
    return params


def _one_primitive(kind: str, T: int, seed: int, index: int, ranges: Mapping) -> SeriesRecord:
    # parameter draws use a sibling stream so the series noise stream stays untouched
    params = sample_primitive_params(kind, np.random.default_rng([int(seed), int(index), 1]), ranges)
    return gen_primitive(kind, params, T, seed, index)


def generate_corpus(kind: str, count: int, T: int, seed: int,
                    ranges: Mapping = CORPUS, workers: int | None = None) -> list[SeriesRecord]:
    """``count`` primitive series, generated in parallel and returned in index order."""
    if count < 1:
        raise ConfigError(f"corpus count must be >= 1, got {count}")
    workers = workers or max_workers()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(lambda i: _one_primitive(kind, T, seed, i, ranges), range(count)))
    log.debug("Generated %d %s series of length %d (seed=%d)", count, kind, T, seed)
    return records


# ---------------------------------------------------------------------------
# Instance normalization
# ---------------------------------------------------------------------------

def znorm(x, eps: float = ZNORM_EPS) -> tuple[np.ndarray, float, float]:
    """(x - mean) / max(std, eps); returns the raw mean and std for denormalization."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size < 1:
        raise ContractError("znorm needs at least one value")
    mu = float(arr.mean())
    sd = float(arr.std())
    return (arr - mu) / max(sd, eps), mu, sd


def denorm(x, mu: float, sd: float, eps: float = ZNORM_EPS) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * max(sd, eps) + mu


# ---------------------------------------------------------------------------
# TSMixup
# ---------------------------------------------------------------------------

def sample_mixture_weights(k: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Dirichlet(alpha) weights over k components."""
    if k < 1:
        raise ConfigError(f"mixture needs k >= 1, got {k}")
    if k == 1:
        return np.ones(1)
    return rng.dirichlet(np.full(k, float(alpha)))


def _draw_segment(pool: Sequence[SeriesRecord], L: int, rng: np.random.Generator,
                  max_attempts: int) -> tuple[SeriesRecord, np.ndarray]:
    for attempt in range(max_attempts):
        rec = pool[int(rng.integers(len(pool)))]
        if len(rec) < L:
            log.debug("tsmixup: %s shorter than %d, resampling (attempt %d)", rec.id, L, attempt + 1)
            continue
        start = int(rng.integers(len(rec) - L + 1))
        seg, _, _ = znorm(rec.target[start:start + L])
        return rec, seg
    raise WindowError(f"tsmixup: no segment of length {L} found in {max_attempts} attempts")


def tsmixup(pool: Sequence[SeriesRecord], k_max: int = TSMIXUP["k_max"],
            alpha: float = TSMIXUP["alpha"], L: int = 512, seed: int = 0, index: int = 0,
            k: int | None = None, weights: Sequence[float] | None = None,
            max_attempts: int = TSMIXUP["max_attempts"]) -> SeriesRecord:
    """Convex mixture of k z-scored length-L segments, k ~ U{1..k_max}, weights ~ Dir(alpha).

    ``k`` and ``weights`` pin the draw (used for controlled experiments).
    """
    if not pool:
        raise InputError("tsmixup needs a non-empty pool")
    rng = series_rng(seed, index)
    if k is None:
        k = int(rng.integers(1, k_max + 1))
    if weights is None:
        lam = sample_mixture_weights(k, alpha, rng)
    else:
        lam = np.asarray(weights, dtype=np.float64)
        if lam.shape != (k,) or np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-12:
            raise ConfigError(f"mixture weights must be {k} non-negative values summing to 1: {lam}")
    parts = [_draw_segment(pool, L, rng, max_attempts) for _ in range(k)]
    mixed = np.zeros(L)
    for w, (_, seg) in zip(lam, parts):
        mixed += w * seg
    first = parts[0][0]
    return SeriesRecord(f"tsmixup-{seed}-{index}", first.freq, mixed, first.season_m)


# ---------------------------------------------------------------------------
# Structural causal model sampler
# ---------------------------------------------------------------------------

@dataclass
class ScmGraph:
    """DAG over ``n_nodes`` series; roots carry kernel recipes, edges carry activations."""

    n_nodes: int
    parents: list[list[int]]
    root_recipes: dict[int, list[dict]] = field(default_factory=dict)
    edge_activations: dict[tuple[int, int], str] = field(default_factory=dict)
    weights: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def roots(self) -> list[int]:
        return [i for i in range(self.n_nodes) if not self.parents[i]]

    def order(self) -> list[int]:
        """Topological order; raises GraphError on a cycle or a bad index."""
        if len(self.parents) != self.n_nodes:
            raise GraphError(f"parents lists ({len(self.parents)}) != n_nodes ({self.n_nodes})")
        for i, ps in enumerate(self.parents):
            bad = [p for p in ps if not 0 <= p < self.n_nodes or p == i]
            if bad:
                raise GraphError(f"node {i} has invalid parents {bad}")
        sorter = graphlib.TopologicalSorter({i: ps for i, ps in enumerate(self.parents)})
        try:
            order = list(sorter.static_order())
        except graphlib.CycleError as exc:
            raise GraphError(f"cyclic graph: {exc.args[1]}") from exc
        if not self.roots:
            raise GraphError("graph has no root node")
        return order


def _sample_recipe(rng: np.random.Generator, spec: Mapping = CAUKER) -> list[dict]:
    lo, hi = spec["n_components"]
    recipe = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        kind = str(rng.choice(["periodic", "rbf", "linear"]))
        comp = {"kind": kind, "weight": float(rng.uniform(0.5, 1.5))}
        if kind == "periodic":
            f_lo, f_hi = spec["periodic_freq"]
            comp["freq"] = int(rng.integers(f_lo, f_hi + 1))
            comp["phase"] = float(rng.uniform(0.0, 2.0 * np.pi))
        elif kind == "rbf":
            comp["length_scale"] = float(rng.uniform(*spec["rbf_length_scale"]))
        else:
            comp["slope"] = float(rng.normal(0.0, 1.0))
        recipe.append(comp)
    return recipe


def sample_scm_graph(seed: int, n_nodes: int | None = None, spec: Mapping = CAUKER) -> ScmGraph:
    """Random DAG built in index order, so every parent index precedes its child."""
    rng = np.random.default_rng([int(seed), 0xCA])
    n = int(n_nodes or spec["n_nodes"])
    if n < 1:
        raise ConfigError(f"SCM graph needs >= 1 node, got {n}")
    parents: list[list[int]] = [[]]
    for i in range(1, n):
        cand = [j for j in range(i) if rng.random() < spec["edge_prob"]]
        if len(cand) > spec["max_parents"]:
            cand = sorted(rng.choice(cand, size=spec["max_parents"], replace=False).tolist())
        parents.append(cand)
    graph = ScmGraph(n_nodes=n, parents=parents)
    for i in range(n):
        if not parents[i]:
            graph.root_recipes[i] = _sample_recipe(rng, spec)
        else:
            for p in parents[i]:
                graph.edge_activations[(i, p)] = str(rng.choice(ACTIVATIONS))
            graph.weights[i] = rng.normal(0.0, 1.0, size=len(parents[i]))
    return graph


def realize_root(recipe: Sequence[Mapping], T: int, rng: np.random.Generator) -> np.ndarray:
    """Basis approximation of a kernel-recipe GP draw."""
    t = np.arange(T, dtype=np.float64)
    y = np.zeros(T)
    for comp in recipe:
        w = float(comp.get("weight", 1.0))
        kind = comp["kind"]
        if kind == "periodic":
            y += w * np.sin(2.0 * np.pi * comp["freq"] * t / T + comp.get("phase", 0.0))
        elif kind == "rbf":
            smooth = gaussian_filter1d(rng.normal(0.0, 1.0, size=T), comp["length_scale"], mode="wrap")
            y += w * smooth / max(float(smooth.std()), ZNORM_EPS)
        elif kind == "linear":
            y += w * comp["slope"] * (t / (T - 1) - 0.5)
        else:
            raise ConfigError(f"unknown kernel component '{kind}'")
    return y


def _activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(x)
    if name == "sin":
        return np.sin(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "identity":
        return x
    raise ConfigError(f"unknown activation '{name}'")


def cauker_lite(graph: ScmGraph | int, T: int, seed: int | None = None,
                noise: float = CAUKER["node_noise"], freq_tag: str = CORPUS["freq_tag"]) -> list[SeriesRecord]:
    """Realize every node of an SCM graph as one series.

    ``graph`` is either an explicit ScmGraph or a seed for ``sample_scm_graph``.
    Children are z-scored sums of activated parents plus small Gaussian noise.
    """
    if T < 16:
        raise WindowError(f"cauker_lite needs T >= 16, got {T}")
    if not isinstance(graph, ScmGraph):
        seed = int(graph) if seed is None else seed
        graph = sample_scm_graph(int(graph))
    seed = 0 if seed is None else int(seed)
    order = graph.order()
    values: dict[int, np.ndarray] = {}
    for i in order:
        rng = series_rng(seed, i)
        ps = graph.parents[i]
        if not ps:
            y = realize_root(graph.root_recipes.get(i, []), T, rng)
        else:
            w = graph.weights.get(i, np.ones(len(ps)))
            y = np.zeros(T)
            for wj, p in zip(w, ps):
                y += wj * _activate(graph.edge_activations.get((i, p), "identity"), values[p])
            y, _, _ = znorm(y)
        if noise > 0:
            y = y + rng.normal(0.0, noise, size=T)
        values[i] = y
    return [SeriesRecord(f"cauker-{seed}-{i}", freq_tag, values[i]) for i in range(graph.n_nodes)]


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------

def _local_std(x: np.ndarray) -> float:
    valid = x[np.isfinite(x)]
    return float(valid.std()) if valid.size else 0.0


def gaussian_noise(x, sigma_level: float, seed: int | Sequence[int] = NOISE_SEED) -> np.ndarray:
    """x + N(0, (sigma_level * std(x))^2); level 0 returns an exact copy."""
    arr = np.asarray(x, dtype=np.float64)
    if sigma_level < 0:
        raise ConfigError(f"sigma_level must be >= 0, got {sigma_level}")
    if sigma_level == 0:
        return arr.copy()
    rng = np.random.default_rng(seed)
    return arr + rng.normal(0.0, sigma_level * _local_std(arr), size=arr.shape)


def impulse_noise(x, p: float, seed: int | Sequence[int] = NOISE_SEED,
                  magnitude: float = IMPULSE_MAGNITUDE) -> np.ndarray:
    """With probability p per step add a spike of +-magnitude * std(x)."""
    arr = np.asarray(x, dtype=np.float64)
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"impulse probability must be in [0, 1], got {p}")
    if p == 0:
        return arr.copy()
    rng = np.random.default_rng(seed)
    hit = rng.random(arr.shape) < p
    sign = np.where(rng.random(arr.shape) < 0.5, -1.0, 1.0)
    spikes = np.where(hit, sign * magnitude * _local_std(arr), 0.0)
    return arr + spikes


NOISE_FUNCS = {"gaussian": gaussian_noise, "impulse": impulse_noise}


# ---------------------------------------------------------------------------
# Corpus dispatch
# ---------------------------------------------------------------------------

def synthesize(kind: str, count: int, T: int, seed: int, ranges: Mapping = CORPUS,
               k_max: int = TSMIXUP["k_max"], alpha: float = TSMIXUP["alpha"],
               workers: int | None = None) -> list[SeriesRecord]:
    """``count`` series of length ``T`` from any registered generator."""
    if count < 1:
        raise ConfigError(f"empty generator spec: count must be >= 1, got {count}")
    if kind in PRIMITIVE_KINDS:
        return generate_corpus(kind, count, T, seed, ranges, workers)
    if kind == "cauker":
        records: list[SeriesRecord] = []
        g = 0
        while len(records) < count:
            graph_seed = int(np.random.SeedSequence([int(seed), g]).generate_state(1)[0])
            records.extend(cauker_lite(sample_scm_graph(graph_seed), T, seed=graph_seed))
            g += 1
        return records[:count]
    if kind == "tsmixup":
        pool = generate_corpus("sine+trend", max(count, 8), T, seed, ranges, workers)
        return [tsmixup(pool, k_max, alpha, T, seed, i) for i in range(count)]
    raise ConfigError(f"unknown generator '{kind}'")
