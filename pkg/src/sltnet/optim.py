"""Adam with additive L2 weight decay, and the step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_size: int = 5
    gamma: float = 0.92
    epochs: int = 300
    batch: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.step_size < 1 or self.epochs < 1 or self.batch < 1:
            raise ConfigError("step_size, epochs and batch must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.weight_decay < 0:
            raise ConfigError("betas must lie in [0, 1) and weight_decay must be non-negative")


def step_lr(epoch: int, cfg: OptimConfig) -> float:
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr * cfg.gamma ** (epoch // cfg.step_size)


class Adam:
    """Moments are kept per parameter name so they can be checkpointed by name."""

    def __init__(self, named_params: list[tuple[str, Tensor]], cfg: OptimConfig):
        self.params = list(named_params)
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if c.weight_decay:
                g = g + c.weight_decay * p.data
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            p.data -= update.astype(p.data.dtype, copy=False)
