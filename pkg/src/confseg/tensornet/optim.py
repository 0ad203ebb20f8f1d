"""Adam optimizer and the cosine learning-rate schedules."""

from __future__ import annotations

import math

import numpy as np

from confseg.tensornet.tensor import Tensor


class Adam:
    """Standard Adam with bias-corrected first/second moments."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype)
            if g.shape != p.data.shape:
                raise ValueError("adam: gradient shape mismatch")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / b1c
            vhat = v / b2c
            p.data = p.data - (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self) -> dict:
        return {
            "step": self.step_count,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state_arrays(self, state: dict):
        self.step_count = int(state["step"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src


class CosineSchedule:
    """Plain cosine annealing from lr_max down to lr_min over one period."""

    kind = "cosine"

    def __init__(self, lr_max: float, lr_min: float = 0.0, period: int = 1):
        if period < 1:
            raise ValueError("cosine period must be >= 1")
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.period = period

    def lr_at(self, t: int) -> float:
        if t < 0:
            raise ValueError("schedule step must be >= 0")
        frac = min(t, self.period) / self.period
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math.cos(math.pi * frac))


class CosineWarmRestarts:
    """Cosine annealing restarted at lr_max, periods growing by a multiplier."""

    kind = "cosine_warm_restarts"

    def __init__(self, lr_max: float, lr_min: float = 0.0, period: int = 10,
                 mult: int = 2):
        if period < 1 or mult < 1:
            raise ValueError("restart period and multiplier must be >= 1")
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.period = period
        self.mult = mult

    def lr_at(self, t: int) -> float:
        if t < 0:
            raise ValueError("schedule step must be >= 0")
        t_local = t
        span = self.period
        while t_local >= span:
            t_local -= span
            span *= self.mult
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (
            1.0 + math.cos(math.pi * t_local / span)
        )


def lr_at(schedule, t: int) -> float:
    return schedule.lr_at(t)
