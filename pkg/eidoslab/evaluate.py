"""
Held-out evaluation: synthetic forecasting tasks, per-task metrics against the
seasonal-naive baseline, and the input-noise robustness sweep.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.stats import gmean
from tqdm import tqdm

from .config import max_workers
from .datagen import NOISE_FUNCS, synthesize
from .errors import ConfigError, EmptyReportError, WindowError
from .forecast import forecast
from .metrics import (
    EvalReport, aggregate, crps_quantile, mase, safe_metric, scaled_crps,
    seasonal_naive, wql,
)
from .model import EidosModel
from .run_config import EvalSection

log = logging.getLogger(__name__)


@dataclass
class EvalTask:
    task_id: str
    context: np.ndarray
    truth: np.ndarray
    season_m: int = 1


def build_eval_tasks(section: EvalSection, seed: int | None = None) -> list[EvalTask]:
    """Held-out tasks: the last ``horizon`` points of each series are the truth."""
    C, H = section.context_length, section.horizon
    T = max(section.length, C + H)
    if section.length < C + H:
        log.warning("eval length %d < context %d + horizon %d, generating %d points",
                    section.length, C, H, T)
    records = synthesize(section.kind, section.count, T,
                         section.holdout_seed if seed is None else seed)
    tasks = []
    for rec in records:
        y = rec.target[-(C + H):]
        tasks.append(EvalTask(rec.id, y[:C].copy(), y[C:].copy(), rec.season_m))
    return tasks


def _parallel(fn: Callable, items: Sequence, workers: int | None, desc: str, progress: bool) -> list:
    """Map ``fn`` over ``items`` on a thread pool; results keep item order."""
    workers = workers or max_workers()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        it = pool.map(fn, items)
        return list(tqdm(it, total=len(items), desc=desc, leave=False, disable=not progress))


def evaluate_task(model: EidosModel, task: EvalTask, section: EvalSection) -> dict:
    """Metrics for one task; undefined metrics come back as NaN."""
    levels = model.cfg.quantiles
    res = forecast(task.context, len(task.truth), model, section.block,
                   use_cache=section.use_cache, sort=section.sort_quantiles)
    base = seasonal_naive(task.context, len(task.truth), task.season_m)
    m = task.season_m if task.context.size > task.season_m else 1
    return {
        "task_id": task.task_id,
        "season_m": task.season_m,
        "mase": safe_metric(mase, res.median, task.truth, task.context, m),
        "crps": safe_metric(scaled_crps, res.quantiles, task.truth, levels),
        "crps_raw": crps_quantile(res.quantiles, task.truth, levels),
        "wql": safe_metric(wql, res.quantiles, task.truth, levels),
        "base_mase": safe_metric(mase, base, task.truth, task.context, m),
        "base_crps": safe_metric(scaled_crps, base, task.truth, levels),
        "base_wql": safe_metric(wql, base, task.truth, levels),
        "crossing_rate": res.crossing_rate,
    }


def evaluate_model(model: EidosModel, tasks: Sequence[EvalTask], section: EvalSection,
                   metadata: dict | None = None, workers: int | None = None,
                   progress: bool = True) -> EvalReport:
    """Run every task in parallel and aggregate ratios against seasonal naive."""
    if not tasks:
        raise EmptyReportError("no evaluation tasks")
    if any(len(t.truth) != section.horizon for t in tasks):
        raise WindowError("task truth lengths do not match the evaluation horizon")
    rows = _parallel(lambda t: evaluate_task(model, t, section), tasks, workers, "eval", progress)
    meta = {"model_hash": model.cfg.hash(), **(metadata or {})}
    report = aggregate(rows, meta)
    log.info("Evaluated %d tasks: MASE ratio %.4f, CRPS ratio %.4f", len(rows),
             report.aggregates.get("mase", math.nan), report.aggregates.get("crps", math.nan))
    return report


# ---------------------------------------------------------------------------
# Noise robustness
# ---------------------------------------------------------------------------

def _noisy_scores(model: EidosModel, task: EvalTask, index: int, kind: str, level: float,
                  seed: int, section: EvalSection) -> tuple[float, float]:
    noisy = NOISE_FUNCS[kind](task.context, level, seed=[int(seed), int(index)])
    res = forecast(noisy, len(task.truth), model, section.block,
                   use_cache=section.use_cache, sort=section.sort_quantiles)
    m = task.season_m if task.context.size > task.season_m else 1
    crps = safe_metric(scaled_crps, res.quantiles, task.truth, model.cfg.quantiles)
    # clean in-sample scale so only the forecast error moves with the noise level
    err = safe_metric(mase, res.median, task.truth, task.context, m)
    return crps, err


def noise_bench(model: EidosModel, tasks: Sequence[EvalTask], kind: str,
                levels: Sequence[float], seed: int, section: EvalSection,
                workers: int | None = None, progress: bool = True) -> pd.DataFrame:
    """Aggregate CRPS per noise level and its ratio to the clean level.

    Each context is perturbed with its own stream ``[seed, task index]`` and then
    re-normalized from its noisy statistics inside ``forecast``. Every level is
    aggregated over the same tasks: those whose metric is defined at all levels.
    ``excluded`` counts the tasks undefined at that level itself.
    """
    if kind not in NOISE_FUNCS:
        raise ConfigError(f"unknown noise kind '{kind}' (choose from {sorted(NOISE_FUNCS)})")
    if 0.0 not in [float(v) for v in levels]:
        raise ConfigError(f"noise levels must include the clean level 0, got {list(levels)}")
    if not tasks:
        raise EmptyReportError("no evaluation tasks")

    per_level = []
    for level in tqdm(levels, desc=f"noise {kind}", leave=False, disable=not progress):
        scores = _parallel(
            lambda it: _noisy_scores(model, it[1], it[0], kind, float(level), seed, section),
            list(enumerate(tasks)), workers, f"level {level:g}", False)
        per_level.append(np.asarray(scores, dtype=np.float64).reshape(len(tasks), 2))

    scores = np.stack(per_level)
    ok = np.isfinite(scores) & (scores > 0)
    shared = ok.all(axis=0)
    if not shared[:, 0].any():
        raise EmptyReportError("no task has a defined CRPS at every noise level")
    dropped = len(tasks) - int(shared[:, 0].sum())
    if dropped:
        log.warning("noise %s: %d of %d tasks left out, undefined at some level", kind, dropped, len(tasks))

    rows = []
    for i, level in enumerate(levels):
        crps = float(gmean(scores[i, shared[:, 0], 0]))
        err = float(gmean(scores[i, shared[:, 1], 1])) if shared[:, 1].any() else math.nan
        rows.append({"level": float(level), "crps": crps, "mase": err,
                     "excluded": int((~ok[i, :, 0]).sum()), "tasks": int(shared[:, 0].sum())})

    table = pd.DataFrame(rows)
    clean = table.loc[table["level"] == 0.0].iloc[0]
    table["relative_crps"] = table["crps"] / clean["crps"]
    table["relative_mase"] = table["mase"] / clean["mase"]
    return table[["level", "crps", "relative_crps", "mase", "relative_mase", "excluded", "tasks"]]
