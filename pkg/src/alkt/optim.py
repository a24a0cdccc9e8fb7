"""SGD with momentum, weight decay and a single step-decay point."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    decay_fraction: float = 0.8
    decay_factor: float = 0.1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if not 0 < self.decay_fraction <= 1:
            raise ValueError(f"decay_fraction must lie in (0, 1], got {self.decay_fraction}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")

    def lr_at(self, epoch: int, total_epochs: int) -> float:
        """Learning rate for a 0-based ``epoch``; drops once at floor(fraction * total)."""
        if epoch >= math.floor(self.decay_fraction * total_epochs):
            return self.lr * self.decay_factor
        return self.lr


class SGD:
    """Keeps one velocity buffer per parameter.

    The update is ``v <- momentum * v + grad + weight_decay * p`` followed by
    ``p <- p - lr * v``; gradients are cleared after each step.
    """

    def __init__(self, params: Iterable[Tensor], cfg: SgdConfig):
        self.params = list(params)
        self.cfg = cfg
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, epoch: int, total_epochs: int) -> None:
        cfg = self.cfg
        lr = cfg.lr_at(epoch, total_epochs)
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else 0.0
            v *= cfg.momentum
            v += g
            if cfg.weight_decay:
                v += cfg.weight_decay * p.data
            p.data -= lr * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params, cfg: SgdConfig, epoch: int, total_epochs: int, state: SGD | None = None) -> SGD:
    """Functional form: apply one step, creating the optimizer state if needed."""
    opt = state if state is not None else SGD(params, cfg)
    opt.step(epoch, total_epochs)
    return opt
