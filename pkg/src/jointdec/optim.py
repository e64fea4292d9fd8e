"""Nesterov-momentum SGD and the warm-restart cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError


@dataclass(frozen=True)
class SgdrSchedule:
    l_max: float = 0.1
    l_min: float = 0.0
    t0: int = 1
    t_mult: int = 2

    def __post_init__(self):
        if self.t0 < 1 or self.t_mult < 1:
            raise ConfigurationError("T_0 and T_mult must be >= 1")
        if not 0 <= self.l_min <= self.l_max:
            raise ConfigurationError("need 0 <= l_min <= l_max")

    def cycle_length(self, c: int) -> int:
        return self.t0 * self.t_mult**c

    def epochs_for_cycles(self, c: int) -> int:
        """Total epochs spanned by the first ``c`` cycles."""
        if self.t_mult == 1:
            return self.t0 * c
        return self.t0 * (self.t_mult**c - 1) // (self.t_mult - 1)

    def locate(self, epoch_frac: float) -> tuple[int, float, int]:
        """Return (cycle index, position within cycle, cycle length)."""
        c = 0
        start = 0
        while True:
            length = self.cycle_length(c)
            if epoch_frac < start + length:
                return c, epoch_frac - start, length
            start += length
            c += 1

    def is_restart_boundary(self, epochs: int) -> bool:
        c = 0
        while self.epochs_for_cycles(c) < epochs:
            c += 1
        return self.epochs_for_cycles(c) == epochs


def sgdr_lr(sched: SgdrSchedule, epoch_frac: float) -> float:
    if epoch_frac < 0:
        raise ConfigurationError(f"epoch position must be >= 0, got {epoch_frac}")
    _, t, length = sched.locate(epoch_frac)
    return sched.l_min + 0.5 * (sched.l_max - sched.l_min) * (1 + math.cos(math.pi * t / length))


@dataclass
class MomentumState:
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)


def nesterov_step(params, grads, state: MomentumState, lr: float) -> None:
    """In-place update of every param array.

    v <- m v - lr g;  p <- p + m v - lr g
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(f"param {i}: {p.shape} vs grad {g.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for param {i}; step refused")
    m = state.momentum
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.weight_decay:
            g = g + state.weight_decay * p
        v = state.velocity.get(i)
        if v is None:
            v = np.zeros_like(p)
        v = m * v - lr * g
        state.velocity[i] = v
        p += m * v - lr * g


class NesterovSGD:
    """Binds a MomentumState to a list of Tensors."""

    def __init__(self, tensors, momentum: float = 0.9, weight_decay: float = 0.0):
        self.tensors = list(tensors)
        self.state = MomentumState(momentum, weight_decay)

    def step(self, lr: float) -> None:
        grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in self.tensors]
        nesterov_step([t.data for t in self.tensors], grads, self.state, lr)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None
