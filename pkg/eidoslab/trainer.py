"""
Training loop for the joint latent/grounding/forecasting objective.

One optimizer step:
  1. draw B z-scored windows of length L from the sampler
  2. split into micro-batches; forward + backward each, summing gradients in
     micro-batch order (fixed reduction order keeps runs bitwise reproducible)
  3. guard against non-finite losses and gradients
  4. clip to the global norm cap, AdamW update at lr_at(step)

Sampler and optimizer state are part of the checkpoint, so resuming from step s
reproduces the uninterrupted run.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import CORPUS
from .datagen import SeriesRecord, synthesize, tsmixup, znorm
from .dataset_io import load_records
from .errors import ConfigError, HashMismatchError, TrainingGuardError, WindowError
from .model import EidosModel, ModelParams
from .objectives import LossWeights, joint_loss
from .optim import OptimState, Schedule, adamw_step, clip_global_norm, lr_at
from .paths import output_paths_for_run
from .run_config import RunConfig
from .tensor import backward

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "lr", "loss_total", "loss_pred", "loss_latent", "loss_gnd"]


# ---------------------------------------------------------------------------
# Corpus + sampler
# ---------------------------------------------------------------------------

def build_training_pool(cfg: RunConfig) -> tuple[list[SeriesRecord], np.ndarray | None]:
    """Records plus optional per-record sampling probabilities from source weights."""
    data = cfg.data
    ranges = {**CORPUS, "sigma": data.sigma}
    sources = data.sources or [{"kind": data.kind, "count": data.count, "length": data.length, "weight": 1.0}]
    records: list[SeriesRecord] = []
    probs: list[float] = []
    for i, src in enumerate(sources):
        unknown = set(src) - {"kind", "path", "count", "length", "weight", "seed"}
        if unknown:
            raise ConfigError(f"unknown keys in data.sources[{i}]: {sorted(unknown)}")
        if "path" in src:
            recs = load_records(src["path"])
        else:
            recs = synthesize(src.get("kind", data.kind), int(src.get("count", data.count)),
                              int(src.get("length", data.length)), int(src.get("seed", cfg.seed + i)),
                              ranges, data.tsmixup_k_max, data.tsmixup_alpha)
        if not recs:
            raise ConfigError(f"data.sources[{i}] produced no records")
        weight = float(src.get("weight", 1.0))
        if weight < 0:
            raise ConfigError(f"data.sources[{i}].weight must be >= 0")
        records.extend(recs)
        probs.extend([weight / len(recs)] * len(recs))
    if data.tsmixup_count > 0:
        mixed = [tsmixup(records, data.tsmixup_k_max, data.tsmixup_alpha, cfg.train.context_length,
                         seed=cfg.seed, index=j) for j in range(data.tsmixup_count)]
        mean_p = float(np.mean(probs))
        records.extend(mixed)
        probs.extend([mean_p] * len(mixed))
    p = np.asarray(probs)
    uniform = np.allclose(p, p[0])
    log.info("Training pool: %d series from %d source(s)", len(records), len(sources))
    return records, None if uniform else p / p.sum()


class WindowSampler:
    """Epoch-based window sampler; each epoch visits a fresh ordering of the pool."""

    def __init__(self, records: Sequence[SeriesRecord], L: int, seed: int,
                 probs: np.ndarray | None = None):
        keep = [i for i, r in enumerate(records) if len(r) >= L]
        if not keep:
            raise WindowError(f"no training series has length >= {L}")
        if len(keep) < len(records):
            log.warning("Skipping %d series shorter than the window length %d", len(records) - len(keep), L)
        self.records = [records[i] for i in keep]
        self.L = L
        self.probs = None
        if probs is not None:
            p = np.asarray(probs, dtype=np.float64)[keep]
            self.probs = p / p.sum()
        self.rng = np.random.default_rng([int(seed), 0x5A])
        self.order = np.empty(0, dtype=np.int64)
        self.cursor = 0
        self.epoch = 0

    def _next_index(self) -> int:
        if self.cursor >= self.order.size:
            n = len(self.records)
            if self.probs is None:
                self.order = self.rng.permutation(n)
            else:
                self.order = self.rng.choice(n, size=n, p=self.probs)
            self.cursor = 0
            self.epoch += 1
            if self.epoch > 1:
                log.debug("Sampler reshuffled (epoch %d)", self.epoch)
        idx = int(self.order[self.cursor])
        self.cursor += 1
        return idx

    def batch(self, size: int) -> np.ndarray:
        out = np.empty((size, self.L))
        for b in range(size):
            rec = self.records[self._next_index()]
            start = int(self.rng.integers(len(rec) - self.L + 1))
            out[b], _, _ = znorm(rec.target[start:start + self.L])
        return out

    def state(self) -> dict:
        return {"bit_generator": self.rng.bit_generator.state, "order": self.order.tolist(),
                "cursor": self.cursor, "epoch": self.epoch}

    def load_state(self, state: Mapping) -> None:
        self.rng.bit_generator.state = state["bit_generator"]
        self.order = np.asarray(state["order"], dtype=np.int64)
        self.cursor = int(state["cursor"])
        self.epoch = int(state["epoch"])


# ---------------------------------------------------------------------------
# One step
# ---------------------------------------------------------------------------

def accumulate_gradients(model: EidosModel, windows: np.ndarray, weights: LossWeights,
                         micro_batch: int, step: int) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Batch-mean gradients and loss components, summed over micro-batches in order."""
    B = windows.shape[0]
    trainable = model.params.trainable()
    grads = {k: np.zeros_like(v.data) for k, v in trainable.items()}
    comps = {"total": 0.0, "pred": 0.0, "latent": 0.0, "gnd": 0.0}
    for lo in range(0, B, micro_batch):
        chunk = windows[lo:lo + micro_batch]
        share = chunk.shape[0] / B
        model.params.zero_grad()
        total, parts = joint_loss(model, chunk, weights, step)
        if total.requires_grad:
            backward(total * share)
        for k, node in trainable.items():
            if node.grad is not None:
                grads[k] += node.grad
        for k in comps:
            comps[k] += share * parts[k]
    model.params.zero_grad()
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingGuardError(f"grad:{k}", step)
    return grads, comps


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    history: pd.DataFrame
    final_step: int
    model: EidosModel | None = field(default=None, repr=False)


def _append_log(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    df = pd.DataFrame(rows, columns=LOG_COLUMNS)
    df.to_csv(path, mode="a", header=not path.exists(), index=False)


def _trim_log(path: Path, start: int) -> None:
    """Drop logged rows at or past ``start`` so a resumed run does not repeat steps."""
    if not path.exists():
        return
    df = pd.read_csv(path)
    kept = df[df["step"] < start]
    if len(kept) < len(df):
        log.warning("Dropping %d logged steps past checkpoint step %d", len(df) - len(kept), start)
        kept.to_csv(path, index=False)


def train(cfg: RunConfig, out_dir: Path | str, records: Sequence[SeriesRecord] | None = None,
          probs: np.ndarray | None = None, resume_from: Path | str | None = None,
          stop_at: int | None = None, progress: bool = True) -> TrainResult:
    """Train per ``cfg``; writes ``checkpoint.eidos`` and ``train_log.csv`` under ``out_dir``.

    ``stop_at`` ends the run early at that step (the schedule still spans
    ``train.total_steps``), which is how an interrupted run is reproduced.
    """
    paths = output_paths_for_run(out_dir)
    t, o = cfg.train, cfg.optim
    weights = cfg.loss_weights()
    if records is None:
        records, probs = build_training_pool(cfg)
    sampler = WindowSampler(records, t.context_length, cfg.seed, probs)
    sched = Schedule.from_fraction(o.lr_peak, t.total_steps, o.warmup_frac)

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.model_hash != cfg.model_hash():
            raise HashMismatchError(ckpt.model_hash, cfg.model_hash(), "model")
        model = ckpt.model()
        optim = ckpt.optim
        start = ckpt.step
        sampler.load_state(ckpt.rng_state["sampler"])
        fixed = np.asarray(ckpt.rng_state["fixed"]) if ckpt.rng_state.get("fixed") is not None else None
        log.info("Resuming from %s at step %d", resume_from, start)
        _trim_log(paths["train_log"], start)
    else:
        model = EidosModel.init(cfg.model_config(), cfg.seed)
        optim = OptimState(lr_peak=o.lr_peak, beta1=o.beta1, beta2=o.beta2, weight_decay=o.weight_decay,
                           eps=o.eps, warmup_steps=sched.warmup_steps, total_steps=sched.total_steps)
        start = 0
        fixed = None
        if paths["train_log"].exists():
            paths["train_log"].unlink()
    end = t.total_steps if stop_at is None else min(stop_at, t.total_steps)
    log.info("Training %s for steps %d..%d (batch %d, L=%d, %d params)",
             cfg.model.preset, start, end, t.batch_size, t.context_length, model.params.count())

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(
            model_config=model.cfg, params=model.params.to_arrays(), optim=optim, step=step,
            config_hash=cfg.config_hash(),
            rng_state={"sampler": sampler.state(), "fixed": None if fixed is None else fixed.tolist()},
            extra={"loss_weights": asdict(weights)},
        )

    history: list[dict] = []
    pending: list[dict] = []
    bar = tqdm(range(start, end), desc="train", leave=False, disable=not progress)
    for step in bar:
        if t.fixed_batch:
            if fixed is None:
                fixed = sampler.batch(t.batch_size)
            windows = fixed
        else:
            windows = sampler.batch(t.batch_size)
        grads, comps = accumulate_gradients(model, windows, weights, t.micro_batch, step)
        grads, norm = clip_global_norm(grads, o.clip_norm)
        if o.clip_norm > 0 and norm > o.clip_norm:
            log.debug("step %d: clipped grad norm %.4g -> %.4g", step, norm, o.clip_norm)
        lr = lr_at(step, sched)
        trainable = model.params.trainable()
        updated = adamw_step({k: v.data for k, v in trainable.items()}, grads, optim, lr)
        for k, arr in updated.items():
            trainable[k].data = arr

        row = {"step": step, "lr": lr, "loss_total": comps["total"], "loss_pred": comps["pred"],
               "loss_latent": comps["latent"], "loss_gnd": comps["gnd"]}
        history.append(row)
        pending.append(row)
        if (step + 1) % t.log_every == 0 or step + 1 == end:
            log.info("step %d lr %.2e total %.4f pred %.4f latent %.4f gnd %.4f",
                     step + 1, lr, comps["total"], comps["pred"], comps["latent"], comps["gnd"])
            _append_log(paths["train_log"], pending)
            pending = []
        if t.checkpoint_every and (step + 1) % t.checkpoint_every == 0 and step + 1 < end:
            save_checkpoint(paths["checkpoint"], snapshot(step + 1))
    bar.close()
    _append_log(paths["train_log"], pending)
    save_checkpoint(paths["checkpoint"], snapshot(end))
    return TrainResult(paths["checkpoint"], paths["train_log"], pd.DataFrame(history, columns=LOG_COLUMNS),
                       end, model)


def latent_plateau(history: pd.DataFrame, tail: float = 0.1) -> float:
    """Mean latent loss over the last ``tail`` fraction of logged steps."""
    if history.empty:
        raise ConfigError("empty training history")
    n = max(1, int(round(len(history) * tail)))
    return float(history["loss_latent"].iloc[-n:].mean())


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bitwise equality of two parameter stores."""
    return list(a) == list(b) and all(np.array_equal(a[k].data, b[k].data) for k in a)
