"""Gradient-fidelity battery: every primitive plus the end-to-end segmenter.

Shared between the `confseg gradcheck` subcommand and the test suite.  All
checks run in 64-bit mode against central finite differences.
"""

from __future__ import annotations

import numpy as np

from confseg import tensornet as tn
from confseg.labels import NUM_CHANNELS
from confseg.segmodel import TinyFPN
from confseg.tensornet.gradcheck import gradient_check, gradient_check_module

PRIMITIVE_TOL = 1e-3
END_TO_END_TOL = 1e-3


def _rand(rng, *shape):
    return rng.normal(0.0, 1.0, shape).astype(np.float64)


def primitive_checks(rng: np.random.Generator) -> dict:
    """Name -> GradCheckResult for every autodiff primitive."""
    checks = {}

    x = tn.Tensor(_rand(rng, 2, 3, 6, 6), requires_grad=True)
    w = tn.Tensor(_rand(rng, 4, 3, 3, 3) * 0.3, requires_grad=True)
    b = tn.Tensor(_rand(rng, 4) * 0.1, requires_grad=True)
    y = rng.integers(0, 2, (2, 4, 3, 3)).astype(np.float64)
    wt = rng.uniform(0.2, 1.0, (2, 4, 3, 3))
    checks["conv2d_stride2_pad1"] = gradient_check(
        lambda: tn.weighted_bce_loss(tn.conv2d(x, w, b, stride=2, pad=1), y, wt),
        [x, w, b], tol=PRIMITIVE_TOL, names=["x", "w", "b"])

    x1 = tn.Tensor(_rand(rng, 2, 2, 5, 5), requires_grad=True)
    w1 = tn.Tensor(_rand(rng, 2, 2, 1, 1), requires_grad=True)
    b1 = tn.Tensor(_rand(rng, 2) * 0.1, requires_grad=True)
    t1 = rng.uniform(0.1, 0.9, (2, 2, 5, 5))
    checks["conv2d_1x1"] = gradient_check(
        lambda: tn.mse_loss(tn.sigmoid(tn.conv2d(x1, w1, b1)), t1),
        [x1, w1, b1], tol=PRIMITIVE_TOL, names=["x", "w", "b"])

    xr = tn.Tensor(_rand(rng, 3, 7), requires_grad=True)
    checks["relu"] = gradient_check(
        lambda: tn.mse_loss(tn.relu(xr), np.zeros((3, 7))),
        [xr], tol=PRIMITIVE_TOL, names=["x"])

    xs = tn.Tensor(_rand(rng, 3, 7), requires_grad=True)
    ts = rng.uniform(0, 1, (3, 7))
    checks["sigmoid"] = gradient_check(
        lambda: tn.mse_loss(tn.sigmoid(xs), ts),
        [xs], tol=PRIMITIVE_TOL, names=["x"])

    xl = tn.Tensor(_rand(rng, 4, 6), requires_grad=True)
    wl = tn.Tensor(_rand(rng, 3, 6), requires_grad=True)
    bl = tn.Tensor(_rand(rng, 3) * 0.1, requires_grad=True)
    ll = rng.integers(0, 3, 4)
    checks["linear"] = gradient_check(
        lambda: tn.softmax_ce_loss(tn.linear(xl, wl, bl), ll),
        [xl, wl, bl], tol=PRIMITIVE_TOL, names=["x", "w", "b"])

    xu = tn.Tensor(_rand(rng, 2, 3, 4, 4), requires_grad=True)
    tu = rng.uniform(0, 1, (2, 3, 8, 8))
    checks["nearest_upsample2"] = gradient_check(
        lambda: tn.mse_loss(tn.nearest_upsample2(xu), tu),
        [xu], tol=PRIMITIVE_TOL, names=["x"])

    xa = tn.Tensor(_rand(rng, 2, 5), requires_grad=True)
    xb = tn.Tensor(_rand(rng, 2, 5), requires_grad=True)
    checks["add"] = gradient_check(
        lambda: tn.mse_loss(tn.add(xa, xb), np.zeros((2, 5))),
        [xa, xb], tol=PRIMITIVE_TOL, names=["a", "b"])
    checks["sub"] = gradient_check(
        lambda: tn.mse_loss(tn.sub(xa, xb), np.ones((2, 5))),
        [xa, xb], tol=PRIMITIVE_TOL, names=["a", "b"])

    xg = tn.Tensor(_rand(rng, 3, 4, 5, 5), requires_grad=True)
    checks["global_avg_pool"] = gradient_check(
        lambda: tn.mse_loss(tn.global_avg_pool(xg, axes=(0, 2, 3)),
                            np.zeros(4)),
        [xg], tol=PRIMITIVE_TOL, names=["x"])

    xt = tn.Tensor(_rand(rng, 4, 8, 3, 3), requires_grad=True)
    tt = rng.uniform(0, 1, (4, 8, 3, 3))
    checks["temporal_shift"] = gradient_check(
        lambda: tn.mse_loss(tn.temporal_shift(xt), tt),
        [xt], tol=PRIMITIVE_TOL, names=["x"])

    zb = tn.Tensor(_rand(rng, 2, 3, 4, 4), requires_grad=True)
    yb = rng.integers(0, 2, (2, 3, 4, 4)).astype(np.float64)
    wb = rng.uniform(0.2, 1.0, (2, 3, 4, 4))
    checks["weighted_bce_loss"] = gradient_check(
        lambda: tn.weighted_bce_loss(zb, yb, wb),
        [zb], tol=PRIMITIVE_TOL, names=["z"])

    zc = tn.Tensor(_rand(rng, 5, 3), requires_grad=True)
    lc = rng.integers(0, 3, 5)
    checks["softmax_ce_loss"] = gradient_check(
        lambda: tn.softmax_ce_loss(zc, lc), [zc], tol=PRIMITIVE_TOL, names=["z"])

    zm = tn.Tensor(_rand(rng, 4, 4), requires_grad=True)
    tm = rng.uniform(-1, 1, (4, 4))
    checks["mse_loss"] = gradient_check(
        lambda: tn.mse_loss(zm, tm),
        [zm], tol=PRIMITIVE_TOL, names=["z"])

    return checks


def end_to_end_check(rng: np.random.Generator):
    """Tiny-FPN forward + confidence-weighted BCE, checked parameter-wise."""
    model = TinyFPN(seed=3)
    # Zero-init head has zero gradients upstream of it if left at zero;
    # nudge it so every parameter sees signal.
    head_rng = np.random.default_rng(9)
    model.head.weight.data = head_rng.normal(
        0.0, 0.05, model.head.weight.data.shape
    ).astype(np.float32)
    x = tn.Tensor(rng.uniform(0, 1, (1, 1, 8, 8)).astype(np.float64))
    y = rng.integers(0, 2, (1, NUM_CHANNELS, 8, 8)).astype(np.float64)
    w = rng.uniform(0.2, 1.0, (1, NUM_CHANNELS, 8, 8))
    return gradient_check_module(
        model, lambda: tn.weighted_bce_loss(model(x), y, w), tol=END_TO_END_TOL
    )


def gradcheck_all(verbose: bool = False, seed: int = 0):
    """Run the full battery; returns (failures, worst_rel_err)."""
    rng = np.random.default_rng(seed)
    failures = []
    worst = 0.0
    for name, result in primitive_checks(rng).items():
        worst = max(worst, result.worst_rel_err)
        status = "pass" if result.passed else "FAIL"
        if verbose:
            print(f"  {name:24s} {status}  rel_err={result.worst_rel_err:.3e}")
        if not result.passed:
            failures.append(name)
    e2e = end_to_end_check(rng)
    worst = max(worst, e2e.worst_rel_err)
    if verbose:
        status = "pass" if e2e.passed else "FAIL"
        print(f"  {'tiny_fpn_end_to_end':24s} {status}  rel_err={e2e.worst_rel_err:.3e}"
              f"  (worst param: {e2e.worst_param})")
    if not e2e.passed:
        failures.append("tiny_fpn_end_to_end")
    return failures, worst
