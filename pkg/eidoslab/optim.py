"""AdamW with decoupled weight decay, linear-warmup + cosine schedule, global-norm clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .config import OPTIM_DEFAULTS
from .errors import ConfigError


@dataclass(frozen=True)
class Schedule:
    lr_peak: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"invalid schedule: warmup={self.warmup_steps}, total={self.total_steps}")

    @classmethod
    def from_fraction(cls, lr_peak: float, total_steps: int,
                      warmup_frac: float = OPTIM_DEFAULTS["warmup_frac"]) -> "Schedule":
        return cls(lr_peak, int(round(warmup_frac * total_steps)), total_steps)


def lr_at(step: int, sched: Schedule) -> float:
    """0 -> lr_peak linearly over warmup, then cosine to 0 at total_steps; clamped past the end."""
    step = max(0, min(int(step), sched.total_steps))
    if step < sched.warmup_steps:
        return sched.lr_peak * step / sched.warmup_steps
    span = sched.total_steps - sched.warmup_steps
    progress = 1.0 if span == 0 else (step - sched.warmup_steps) / span
    return sched.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    lr_peak: float = OPTIM_DEFAULTS["lr_peak"]
    beta1: float = OPTIM_DEFAULTS["beta1"]
    beta2: float = OPTIM_DEFAULTS["beta2"]
    weight_decay: float = OPTIM_DEFAULTS["weight_decay"]
    eps: float = OPTIM_DEFAULTS["eps"]
    warmup_steps: int = 0
    total_steps: int = 1
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.lr_peak, self.warmup_steps, self.total_steps)

    def hyper(self) -> dict:
        return {k: getattr(self, k) for k in
                ("lr_peak", "beta1", "beta2", "weight_decay", "eps", "warmup_steps", "total_steps", "step")}


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
               state: OptimState, lr: float | None = None) -> dict[str, np.ndarray]:
    """One bias-corrected AdamW update; returns new arrays and advances ``state.step``.

    Parameters without a gradient entry see a zero gradient (decay still applies).
    """
    if lr is None:
        lr = lr_at(state.step, state.schedule)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    updated = {}
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(w)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        adaptive = (m / c1) / (np.sqrt(v / c2) + state.eps)
        updated[name] = w - lr * state.weight_decay * w - lr * adaptive
    state.step = t
    return updated


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by min(1, max_norm / norm). ``max_norm <= 0`` disables clipping."""
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm
