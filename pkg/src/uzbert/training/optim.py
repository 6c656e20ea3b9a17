"""Adam with decoupled weight decay, warmup/linear-decay schedule, grad clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model.encoder import EncoderState, is_no_decay
from .config import TrainConfig


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, state: EncoderState) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in state.params.items()},
                   {k: np.zeros_like(p) for k, p in state.params.items()})

    def reset_moments(self) -> None:
        for arr in (*self.m.values(), *self.v.values()):
            arr.fill(0)

    def to_dict(self) -> dict:
        return {"step": self.step, "m": self.m, "v": self.v}

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizerState":
        return cls(dict(data["m"]), dict(data["v"]), int(data["step"]))


def learning_rate(step: int, peak: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to ``peak`` at ``warmup_steps``, then linear decay to 0 at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak * step / warmup_steps
    if total_steps <= warmup_steps:
        return peak
    return peak * max(0.0, (total_steps - step) / (total_steps - warmup_steps))


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def optimizer_step(state: EncoderState, grads: dict[str, np.ndarray], opt: OptimizerState,
                   config: TrainConfig, total_steps: int) -> tuple[float, float]:
    """Apply one update in place; returns (learning rate used, pre-clip grad norm).

    Raises NonFiniteGradientError without touching any state when a gradient
    holds NaN or inf.
    """
    norm = global_norm(grads)
    if not math.isfinite(norm):
        bad = sorted(k for k, g in grads.items() if not np.all(np.isfinite(g)))
        raise NonFiniteGradientError(f"non-finite gradients in {bad[:5]}")

    clip = 1.0
    if config.max_grad_norm > 0 and norm > config.max_grad_norm:
        clip = config.max_grad_norm / norm

    opt.step += 1
    t = opt.step
    lr = learning_rate(t, config.learning_rate, config.warmup_steps, total_steps)
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in state.params.items():
        g = grads[name] * clip if clip != 1.0 else grads[name]
        m, v = opt.m[name], opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if config.weight_decay and not is_no_decay(name):
            update += config.weight_decay * p
        p -= lr * update
    return lr, norm
