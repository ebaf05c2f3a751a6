"""Model, training, data and evaluation defaults."""
from __future__ import annotations

import os

# --- Backbone presets: (n_layers, d_model, d_intermediate, n_heads) ---
# small/base/large are the published scaling variants; toy is the desk-scale
# configuration used by the acceptance runs.
PRESETS = {
    "toy":   {"n_layers": 2,  "d_model": 64,  "d_intermediate": 192,  "n_heads": 4},
    "small": {"n_layers": 6,  "d_model": 384, "d_intermediate": 1024, "n_heads": 12},
    "base":  {"n_layers": 12, "d_model": 384, "d_intermediate": 1024, "n_heads": 12},
    "large": {"n_layers": 12, "d_model": 768, "d_intermediate": 2048, "n_heads": 12},
}
DEFAULT_PRESET = "small"
ROPE_THETA = 10_000.0
LN_EPS = 1e-6

# --- Forecast head ---
QUANTILE_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_HORIZON = 64           # l: head block length and aggregator kernel size

TOKENIZER_KINDS = ("siglu", "linear")
AGGREGATOR_KINDS = ("depthwise", "avgpool", "linear")
GROUNDING_MODES = ("synced", "frozen_at_init")

# --- Init ---
INIT_STD = 0.02                # backbone / head / aggregator scaled normal

# --- Joint objective weights ---
LOSS_WEIGHTS = {
    "lambda_pred": 1.0,
    "lambda_latent": 0.1,
    "lambda_gnd": 0.1,
}
# Ablation presets: full objective, latent without grounding, forecasting only
LOSS_PRESETS = {
    "full":         {"lambda_pred": 1.0, "lambda_latent": 0.1, "lambda_gnd": 0.1},
    "no_grounding": {"lambda_pred": 1.0, "lambda_latent": 0.1, "lambda_gnd": 0.0},
    "pred_only":    {"lambda_pred": 1.0, "lambda_latent": 0.0, "lambda_gnd": 0.0},
}
NORM_FLOOR = 1e-12             # L2-normalize floor in the latent loss

# --- Optimizer (AdamW) ---
OPTIM_DEFAULTS = {
    "lr_peak": 1e-3,
    "beta1": 0.9,
    "beta2": 0.95,
    "weight_decay": 0.01,
    "eps": 1e-8,
    "warmup_frac": 0.10,       # warmup_steps = warmup_frac * total_steps
    "clip_norm": 1.0,          # 0 disables global-norm clipping
}

# --- Training (desk scale) ---
TRAIN_DEFAULTS = {
    "total_steps": 5_000,
    "batch_size": 16,
    "micro_batch": 4,          # forward/backward chunk; gradients summed in chunk order
    "context_length": 512,     # training window length L
    "log_every": 10,
    "checkpoint_every": 500,
}

# --- Data ---
ZNORM_EPS = 1e-8
TSMIXUP = {"k_max": 3, "alpha": 1.5, "max_attempts": 20}
CAUKER = {
    "n_nodes": 6,
    "edge_prob": 0.4,
    "max_parents": 3,
    "n_components": (1, 3),     # kernel components per root recipe
    "periodic_freq": (1, 32),   # integer cycles per series
    "rbf_length_scale": (4.0, 64.0),
    "node_noise": 0.05,
}
ACTIVATIONS = ("tanh", "sin", "relu", "identity")
PRIMITIVE_KINDS = ("sine", "trend", "sine+trend", "noise")
SYNTH_KINDS = PRIMITIVE_KINDS + ("cauker", "tsmixup")
# Per-series parameter ranges for synthetic corpora
CORPUS = {
    "period_range": (8, 64),     # sine period in steps; season_m = round(period)
    "slope_range": (-2.0, 2.0),  # total rise over the series
    "amplitude_range": (0.5, 2.0),
    "sigma": 0.1,
    "freq_tag": "H",
}

# --- Noise robustness ---
NOISE_SEED = 42
GAUSSIAN_LEVELS = (0.0, 0.2, 0.4, 0.6, 0.8)
IMPULSE_LEVELS = (0.0, 0.05, 0.1, 0.15, 0.2)
IMPULSE_MAGNITUDE = 8.0

# --- Metrics ---
METRIC_FLOOR = 1e-12

# --- Representation analysis ---
PROBE_DEFAULTS = {
    "count": 1_000,            # per class
    "length": 512,
    "sigma": 0.1,
    "slope_range": (0.5, 2.0),
    "freq_range": (1.0, 5.0),
    "seed": 0,
    "batch": 32,
}
LDR_EPS = 1e-6
STEER_ALPHAS = (-0.5, -0.2, 0.0, 0.2, 0.5)
DEFAULT_STEER_ALPHAS = (0.2, 0.5)
DIRECTION_FLOOR = 1e-9

# --- Concurrency ---
THREADS_ENV = "EIDOSLAB_THREADS"


def max_workers() -> int:
    """Worker cap from EIDOSLAB_THREADS, defaulting to min(4, cpu count)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))
