"""Tensor type, autodiff primitives, and the tiny module system."""

from __future__ import annotations

import numpy as np


class Tensor:
    """Dense N-dimensional array with reverse-mode gradient support.

    Gradients accumulate into ``grad`` when ``backward()`` is called on a
    scalar result.  Graph edges are recorded only while at least one input
    requires a gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _result(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents
        out._backward = backward
        # Interior nodes keep graph edges even when no leaf underneath
        # requires grad -- cheap, and keeps the rule simple.
    return out


def _wants(p: Tensor) -> bool:
    return p.requires_grad or p._backward is not None


# ---------------------------------------------------------------------------
# Elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if _wants(a):
            a._accumulate(g)
        if _wants(b):
            b._accumulate(g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if _wants(a):
            a._accumulate(g)
        if _wants(b):
            b._accumulate(-g)

    return _result(a.data - b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if _wants(x):
            x._accumulate(g * mask)

    return _result(np.where(mask, x.data, 0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_stable(x.data)

    def backward(g):
        if _wants(x):
            x._accumulate(g * s * (1.0 - s))

    return _result(s, (x,), backward)


def _sigmoid_stable(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def backward(g):
        if _wants(x):
            x._accumulate(g.reshape(old))

    return _result(x.data.reshape(shape), (x,), backward)


# ---------------------------------------------------------------------------
# Convolution (im2col + matmul)

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    # xp: (N, C, Hp, Wp) already padded
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (N, C, OH, OW, kh, kw)
    n, c, oh, ow = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution over (N, C, H, W) with zero padding.

    Weights are (F, C, kh, kw); bias is (F,).
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects (N,C,H,W) input, got {x.shape}")
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {cw}")
    if b.data.shape != (f,):
        raise ValueError("conv2d: bias shape mismatch")
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ValueError("conv2d: kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(f, c * kh * kw)
    out = cols @ wmat.T + b.data
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        if _wants(w):
            w._accumulate((gm.T @ cols).reshape(w.data.shape))
        if _wants(b):
            b._accumulate(gm.sum(axis=0))
        if _wants(x):
            dcols = gm @ wmat  # (N*OH*OW, C*kh*kw)
            dcols = dcols.reshape(n, oh, ow, c, kh, kw)
            hp, wp = h + 2 * pad, wd + 2 * pad
            dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                ilim = i + stride * (oh - 1) + 1
                for j in range(kw):
                    jlim = j + stride * (ow - 1) + 1
                    dxp[:, :, i:ilim:stride, j:jlim:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            if pad:
                dxp = dxp[:, :, pad:hp - pad, pad:wp - pad]
            x._accumulate(dxp)

    return _result(np.ascontiguousarray(out), (x, w, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (N, D) @ w.T + b with w of shape (out, D)."""
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"linear: input {x.shape} incompatible with weight {w.shape}"
        )
    out = x.data @ w.data.T + b.data

    def backward(g):
        if _wants(w):
            w._accumulate(g.T @ x.data)
        if _wants(b):
            b._accumulate(g.sum(axis=0))
        if _wants(x):
            x._accumulate(g @ w.data)

    return _result(out, (x, w, b), backward)


def nearest_upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 spatial upsampling of (N, C, H, W)."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        if _wants(x):
            dx = (
                g[:, :, 0::2, 0::2]
                + g[:, :, 0::2, 1::2]
                + g[:, :, 1::2, 0::2]
                + g[:, :, 1::2, 1::2]
            )
            x._accumulate(dx)

    return _result(out, (x,), backward)


def global_avg_pool(x: Tensor, axes=(2, 3)) -> Tensor:
    """Mean over the given axes (default: spatial)."""
    axes = tuple(sorted(axes))
    out = x.data.mean(axis=axes)
    count = 1
    for ax in axes:
        count *= x.data.shape[ax]

    def backward(g):
        if _wants(x):
            ge = np.expand_dims(g, axes)
            x._accumulate(np.broadcast_to(ge, x.data.shape) / count)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# Temporal shift

def temporal_shift(x: Tensor, shift_fraction: float = 0.125) -> Tensor:
    """Shift a channel slice one step forward and one backward in time.

    Input is (T, C, H, W).  The first floor(C * fraction) channels move +1
    in time, the next group moves -1, the rest pass through; temporal
    boundaries are zero-padded.
    """
    if x.data.ndim != 4:
        raise ValueError(f"temporal_shift expects (T,C,H,W), got {x.shape}")
    t, c = x.data.shape[:2]
    fold = int(c * shift_fraction)
    if fold < 1:
        raise ValueError(
            f"temporal_shift: {c} channels too few for fraction {shift_fraction}"
        )
    out = x.data.copy()
    out[:, :fold] = 0
    out[:, fold:2 * fold] = 0
    if t > 1:
        out[1:, :fold] = x.data[:-1, :fold]
        out[:-1, fold:2 * fold] = x.data[1:, fold:2 * fold]

    def backward(g):
        if _wants(x):
            dx = g.copy()
            dx[:, :fold] = 0
            dx[:, fold:2 * fold] = 0
            if t > 1:
                dx[:-1, :fold] = g[1:, :fold]
                dx[1:, fold:2 * fold] = g[:-1, fold:2 * fold]
            x._accumulate(dx)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# Losses

def weighted_bce_loss(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean of -w * [y log(sigmoid(z)) + (1-y) log(1-sigmoid(z))].

    Targets and weights are constants; the gradient w.r.t. the logits is
    w * (sigmoid(z) - y) / N.
    """
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype)
    w = np.asarray(weights, dtype=z.dtype)
    if y.shape != z.shape or w.shape != z.shape:
        raise ValueError("weighted_bce_loss: target/weight shape mismatch")
    # log(1 + e^-|z|) + max(z, 0) - z*y, numerically stable in both tails
    per_pixel = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = (w * per_pixel).mean()
    n = z.size

    def backward(g):
        if _wants(logits):
            logits._accumulate(g * w * (_sigmoid_stable(z) - y) / n)

    return _result(np.asarray(loss, dtype=z.dtype), (logits,), backward)


def softmax_ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (N, K) logits against integer labels."""
    z = logits.data
    if z.ndim != 2:
        raise ValueError("softmax_ce_loss expects (N, K) logits")
    labels = np.asarray(labels, dtype=np.int64)
    n = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = (logsumexp - z[np.arange(n), labels]).mean()

    def backward(g):
        if _wants(logits):
            p = np.exp(z - zmax)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), labels] -= 1.0
            logits._accumulate(g * p / n)

    return _result(np.asarray(loss, dtype=z.dtype), (logits,), backward)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    y = np.asarray(target, dtype=pred.data.dtype)
    if y.shape != pred.data.shape:
        raise ValueError("mse_loss: shape mismatch")
    diff = pred.data - y
    loss = (diff ** 2).mean()
    n = pred.data.size

    def backward(g):
        if _wants(pred):
            pred._accumulate(g * 2.0 * diff / n)

    return _result(np.asarray(loss, dtype=pred.data.dtype), (pred,), backward)


# ---------------------------------------------------------------------------
# Modules

class Module:
    """Container of parameters and sub-modules, discovered by attribute walk."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix=f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(prefix=f"{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{key}.{i}", item))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def set_dtype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        params = dict(self.named_parameters())
        for name, arr in state.items():
            if name not in params:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            if params[name].data.shape != arr.shape:
                raise ValueError(
                    f"parameter {name!r}: shape {arr.shape} != {params[name].data.shape}"
                )
            params[name].data = arr.astype(params[name].data.dtype).copy()
        if strict:
            missing = set(params) - set(state)
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)}")


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1,
                 pad: int | None = None, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        if zero_init:
            w = np.zeros((cout, cin, k, k), dtype=np.float32)
        else:
            rng = rng or np.random.default_rng(0)
            std = np.sqrt(2.0 / (cin * k * k))
            w = rng.normal(0.0, std, (cout, cin, k, k)).astype(np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((dout, din), dtype=np.float32)
        else:
            rng = rng or np.random.default_rng(0)
            std = np.sqrt(2.0 / din)
            w = rng.normal(0.0, std, (dout, din)).astype(np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(dout, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)
