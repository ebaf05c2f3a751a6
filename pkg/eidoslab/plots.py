"""Standalone SVG line plots for probe curves and steering sweeps."""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

log = logging.getLogger(__name__)


def plot_probe_curves(df: pd.DataFrame, path: Path | str, title: str = "") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(df["layer"], df["ldr"], marker="o", label="model")
    if "ldr_random" in df:
        ax.plot(df["layer"], df["ldr_random"], marker="x", linestyle="--", label="random init")
    ax.set_xlabel("layer")
    ax.set_ylabel("LDR")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    log.debug("Wrote %s", path)
    return path


def plot_steer_sweep(trace: pd.DataFrame, path: Path | str, title: str = "") -> Path:
    path = Path(path)
    means = trace.groupby("alpha")[["response", "baseline_response"]].mean()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(means.index, means["response"], marker="o", label="steered")
    ax.plot(means.index, means["baseline_response"], linestyle="--", label="baseline")
    ax.set_xlabel("alpha")
    ax.set_ylabel("response")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    log.debug("Wrote %s", path)
    return path
