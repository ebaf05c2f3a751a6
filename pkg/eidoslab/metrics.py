"""
Forecast metrics (MASE, quantile CRPS, WQL), the seasonal-naive baseline, and
benchmark aggregation (geometric mean of baseline-relative ratios, average rank).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import gmean

from .config import METRIC_FLOOR, QUANTILE_LEVELS
from .errors import DimensionError, EmptyReportError, UndefinedMetricError

log = logging.getLogger(__name__)

RATIO_METRICS = ("mase", "crps", "wql")


# ---------------------------------------------------------------------------
# Baseline
# ---------------------------------------------------------------------------

def seasonal_naive(context, H: int, m: int) -> np.ndarray:
    """y_hat[T+h] = y[T+h-m*ceil(h/m)]; falls back to m=1 when the context is shorter than m."""
    y = np.asarray(context, dtype=np.float64).reshape(-1)
    if y.size < 1:
        raise UndefinedMetricError("seasonal_naive needs a non-empty context")
    if m < 1 or y.size < m:
        log.warning("seasonal_naive: context length %d < m=%d, falling back to m=1", y.size, m)
        m = 1
    T = y.size
    h = np.arange(1, H + 1)
    idx = T + h - m * np.ceil(h / m).astype(int) - 1
    return y[idx]


# ---------------------------------------------------------------------------
# Point and probabilistic metrics
# ---------------------------------------------------------------------------

def mase(forecast, truth, insample, m: int) -> float:
    f = np.asarray(forecast, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    ins = np.asarray(insample, dtype=np.float64)
    if f.shape != y.shape:
        raise DimensionError(f"mase: forecast {f.shape} vs truth {y.shape}")
    if ins.size <= m:
        raise UndefinedMetricError(f"mase: insample length {ins.size} must exceed m={m}")
    scale = float(np.mean(np.abs(ins[m:] - ins[:-m])))
    if scale < METRIC_FLOOR:
        raise UndefinedMetricError("mase: in-sample seasonal differences are all zero")
    return float(np.mean(np.abs(y - f)) / scale)


def pinball(q, y, yhat) -> np.ndarray:
    """max[q (y - yhat), (1 - q)(yhat - y)], elementwise."""
    e = np.asarray(y) - np.asarray(yhat)
    return np.maximum(q * e, (q - 1.0) * e)


def _quantile_losses(pred_q, truth, levels: Sequence[float]) -> np.ndarray:
    p = np.asarray(pred_q, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64).reshape(-1)
    q = np.asarray(levels, dtype=np.float64)
    if p.ndim == 1:
        p = np.broadcast_to(p[:, None], (p.size, q.size))
    if p.shape != (y.size, q.size):
        raise DimensionError(f"quantile predictions {p.shape} vs truth ({y.size}) x levels ({q.size})")
    return pinball(q[None, :], y[:, None], p)


def crps_quantile(pred_q, truth, levels: Sequence[float] = QUANTILE_LEVELS) -> float:
    """mean over steps and levels of 2 * pinball; a 1-d prediction is a point forecast."""
    return float(2.0 * _quantile_losses(pred_q, truth, levels).mean())


def scaled_crps(pred_q, truth, levels: Sequence[float] = QUANTILE_LEVELS) -> float:
    """CRPS divided by mean |truth|."""
    denom = float(np.mean(np.abs(truth)))
    if denom < METRIC_FLOOR:
        raise UndefinedMetricError("scaled CRPS: mean |truth| is zero")
    return crps_quantile(pred_q, truth, levels) / denom


def wql(pred_q, truth, levels: Sequence[float] = QUANTILE_LEVELS) -> float:
    """sum over steps and levels of 2 * pinball, divided by sum |truth|."""
    denom = float(np.sum(np.abs(truth)))
    if denom < METRIC_FLOOR:
        raise UndefinedMetricError("wql: truth is all zero")
    return float(2.0 * _quantile_losses(pred_q, truth, levels).sum() / denom)


def safe_metric(fn, *args, **kwargs) -> float:
    """Metric value, or NaN when undefined."""
    try:
        return fn(*args, **kwargs)
    except UndefinedMetricError as exc:
        log.debug("undefined metric %s: %s", fn.__name__, exc)
        return math.nan


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    rows: pd.DataFrame
    aggregates: dict[str, float]
    excluded: dict[str, int]
    metadata: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"aggregates": self.aggregates, "excluded": self.excluded,
                "tasks": int(len(self.rows)), **self.metadata}


def _ratio_column(df: pd.DataFrame, metric: str) -> pd.Series:
    model = df[metric].astype(float)
    base = df[f"base_{metric}"].astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = model / base
    ok = np.isfinite(ratio) & (ratio > 0) & (base > 0)
    return ratio.where(ok)


def aggregate(rows: Sequence[Mapping] | pd.DataFrame, metadata: Mapping | None = None) -> EvalReport:
    """Per-metric ratio model/baseline and its geometric mean over valid rows.

    Rows with undefined or non-positive ratios are left out of that metric's mean
    and counted in ``excluded``.
    """
    df = pd.DataFrame(rows).copy()
    if df.empty:
        raise EmptyReportError("no evaluation rows")
    aggregates: dict[str, float] = {}
    excluded: dict[str, int] = {}
    any_valid = False
    for metric in RATIO_METRICS:
        if metric not in df or f"base_{metric}" not in df:
            continue
        ratio = _ratio_column(df, metric)
        df[f"{metric}_ratio"] = ratio
        valid = ratio.dropna()
        excluded[metric] = int(len(df) - len(valid))
        if valid.empty:
            aggregates[metric] = math.nan
            continue
        any_valid = True
        aggregates[metric] = float(gmean(valid.to_numpy()))
    if not any_valid:
        raise EmptyReportError(f"all {len(df)} rows have undefined ratios")
    for metric, n in excluded.items():
        if n:
            log.warning("%s: %d of %d tasks excluded from the geometric mean", metric, n, len(df))
    return EvalReport(df, aggregates, excluded, dict(metadata or {}))


def average_rank(scores: Mapping[str, Sequence[float]] | pd.DataFrame) -> pd.Series:
    """Mean rank per model (1 = best) across tasks; columns are models, rows tasks."""
    df = pd.DataFrame(scores)
    if df.empty:
        raise EmptyReportError("no scores to rank")
    ranks = df.rank(axis=1, method="average", ascending=True)
    return ranks.mean(axis=0).sort_values()


def compare_reports(reports: Mapping[str, EvalReport], metric: str = "mase") -> pd.DataFrame:
    """Side-by-side per-task ratios and the average rank of each model."""
    col = f"{metric}_ratio"
    table = pd.DataFrame({name: r.rows.set_index("task_id")[col] for name, r in reports.items()})
    table = table.dropna(how="any")
    ranks = average_rank(table)
    out = pd.DataFrame({
        "geo_mean": {name: reports[name].aggregates.get(metric, math.nan) for name in reports},
        "avg_rank": ranks,
    })
    return out.sort_values("avg_rank")
