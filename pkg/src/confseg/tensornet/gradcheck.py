"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from confseg.tensornet.tensor import Tensor


@dataclass
class GradCheckResult:
    passed: bool
    worst_rel_err: float
    worst_param: str = ""
    per_param: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed


def gradient_check(loss_fn, params: list, tol: float = 1e-3,
                   h: float = 1e-5, names: list | None = None) -> GradCheckResult:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph on each call and return a scalar
    Tensor; ``params`` are the leaf tensors to perturb.  Everything is run
    in float64; original dtypes are restored afterwards.  Elements where
    |analytic| + |numeric| <= 1e-10 are ignored.
    """
    params = list(params)
    names = names or [f"param{i}" for i in range(len(params))]
    saved_dtypes = [p.data.dtype for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
        p.grad = None

    try:
        loss = loss_fn()
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite loss {loss.data!r} in gradient check")
        loss.backward()
        analytic = [
            (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for p in params
        ]

        worst = 0.0
        worst_param = ""
        per_param: dict[str, float] = {}
        for name, p, a in zip(names, params, analytic):
            flat = p.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
                flat[i] = orig
                num[i] = (up - down) / (2.0 * h)
            a_flat = a.reshape(-1)
            denom = np.abs(a_flat) + np.abs(num)
            live = denom > 1e-10
            if live.any():
                rel = np.abs(a_flat[live] - num[live]) / denom[live]
                err = float(rel.max())
            else:
                err = 0.0
            per_param[name] = err
            if err > worst:
                worst = err
                worst_param = name
        return GradCheckResult(
            passed=worst <= tol,
            worst_rel_err=worst,
            worst_param=worst_param,
            per_param=per_param,
        )
    finally:
        for p, dt in zip(params, saved_dtypes):
            p.data = p.data.astype(dt)
            p.grad = None


def gradient_check_module(module, loss_fn, tol: float = 1e-3, h: float = 1e-5) -> GradCheckResult:
    """Gradient-check every parameter of a module against ``loss_fn``."""
    named = module.named_parameters()
    return gradient_check(
        loss_fn,
        [p for _, p in named],
        tol=tol,
        h=h,
        names=[n for n, _ in named],
    )
