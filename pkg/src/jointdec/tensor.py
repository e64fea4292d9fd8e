"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (if any) when at
least one input requires a gradient. ``backward(tape, loss)`` then walks the
tape in reverse and writes ``dloss/dleaf`` into ``leaf.grad``.

    with Tape() as tape:
        loss = tensor.sum(tensor.relu(x))
    backward(tape, loss)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractError, DimensionError, NumericError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """A float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, name or "tensor")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool, what: str) -> "Tensor":
        # internal constructor: no copy, still finite-checked
        _check_finite(arr, what)
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.name = ""
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is topologically
    ordered by construction. A tape belongs to the thread that opened it.
    """

    _local = threading.local()

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        stack = self._stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        self._stack().pop()
        return False

    @classmethod
    def _stack(cls) -> list:
        if not hasattr(cls._local, "stack"):
            cls._local.stack = []
        return cls._local.stack

    @classmethod
    def active(cls) -> Optional["Tape"]:
        stack = cls._stack()
        return stack[-1] if stack else None

    def __len__(self):
        return len(self.nodes)


def _emit(op: str, inputs: tuple, out_arr: np.ndarray, backward_fn) -> Tensor:
    tape = Tape.active()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_arr, track, op)
    if track:
        tape.nodes.append(Node(op, inputs, out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Fill ``grad`` on every leaf tensor that ``loss`` depends on.

    Leaf gradients are overwritten, not accumulated.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced under gradient tracking")
    produced = {id(n.output) for n in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in produced:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads[key]
        _check_finite(g, "gradient")
        t.grad = np.array(g, dtype=np.float64).reshape(t.shape)


# ---------------------------------------------------------------------------
# elementwise / reductions


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: {a.shape} vs {b.shape}")
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant (non-differentiated) array of the same shape."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise DimensionError(f"mul_const: {a.shape} vs {c.shape}")
    return _emit("mul_const", (a,), a.data * c, lambda g: (g * c,))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _emit("sum", (a,), np.array(a.data.sum()), lambda g: (np.full(shape, g),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _emit(
        "mean", (a,), np.array(a.data.mean()), lambda g: (np.full(shape, g / n),)
    )


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _emit("reshape", (a,), out, lambda g: (g.reshape(old),))


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; values below ``floor`` are clamped and get zero gradient."""
    x = a.data
    if floor > 0:
        clamped = x < floor
        safe = np.where(clamped, floor, x)
    else:
        if (x <= 0).any():
            raise NumericError("log of non-positive value")
        clamped = None
        safe = x

    def bwd(g):
        gx = g / safe
        if clamped is not None:
            gx = np.where(clamped, 0.0, gx)
        return (gx,)

    return _emit("log", (a,), np.log(safe), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", (a,), np.maximum(a.data, 0.0), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# layers


def softmax(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax expects [N,C], got {logits.shape}")
    if logits.shape[1] < 2:
        raise DimensionError("softmax needs at least two classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit("softmax", (logits,), p, bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` with weight shaped [out, in]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: x{x.shape} weight{weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias{bias.shape} for weight{weight.shape}")
    xd, wd = x.data, weight.data

    def bwd(g):
        return (g @ wd, g.T @ xd, g.sum(axis=0))

    return _emit("linear", (x, weight, bias), xd @ wd.T + bias.data, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    hw = h * w

    def bwd(g):
        return (np.repeat((g / hw).reshape(n, c, 1), hw, axis=2).reshape(n, c, h, w),)

    return _emit("global_avg_pool", (x,), x.data.mean(axis=(2, 3)), bwd)


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError(f"avg_pool2d expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ConfigurationError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bwd(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx,)

    return _emit("avg_pool2d", (x,), out, bwd)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of [N,C,H,W] input with a [K,C,R,S] kernel (no bias)."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: input{x.shape} kernel{kernel.shape}")
    n, c, h, w = x.shape
    k, kc, r, s = kernel.shape
    if kc != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {kc}")
    if stride < 1 or pad < 0:
        raise ConfigurationError(f"conv2d: stride={stride} pad={pad}")
    span_h, span_w = h + 2 * pad - r, w + 2 * pad - s
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ConfigurationError(
            f"conv2d: output size not integral for {h}x{w}, kernel {r}x{s}, "
            f"stride {stride}, pad {pad}"
        )
    ho, wo = span_h // stride + 1, span_w // stride + 1

    # im2col in channels-last order so the gather copies contiguous runs
    xh = x.data.transpose(0, 2, 3, 1)
    xp = np.pad(xh, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else np.ascontiguousarray(xh)
    win = sliding_window_view(xp, (r, s), axis=(1, 2))[:, ::stride, ::stride]
    # [N,Ho,Wo,C,R,S] -> [N*Ho*Wo, R*S*C]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, r * s * c)
    wmat = kernel.data.transpose(0, 2, 3, 1).reshape(k, r * s * c)
    out = (cols @ wmat.T).reshape(n, ho, wo, k).transpose(0, 3, 1, 2)

    def bwd(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, k)
        gk = (gmat.T @ cols).reshape(k, r, s, c).transpose(0, 3, 1, 2)
        if not x.requires_grad:
            return (None, np.ascontiguousarray(gk))
        dcols = (gmat @ wmat).reshape(n, ho, wo, r, s, c)
        gxp = np.zeros(xp.shape)
        for i in range(r):
            for j in range(s):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, i, j]
        if pad:
            gxp = gxp[:, pad : pad + h, pad : pad + w]
        return (np.ascontiguousarray(gxp.transpose(0, 3, 1, 2)), np.ascontiguousarray(gk))

    return _emit("conv2d", (x, kernel), np.ascontiguousarray(out), bwd)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization over [N,C] or [N,C,H,W] input.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place as ``momentum * old + (1 - momentum) * batch``.
    """
    if x.data.ndim not in (2, 4):
        raise DimensionError(f"batchnorm expects [N,C] or [N,C,H,W], got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: {c} channels, gamma{gamma.shape} beta{beta.shape}")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.data.ndim == 2 else (1, c, 1, 1)
    xd = x.data

    if training:
        count = xd.size // c
        if count < 2:
            raise ContractError("batchnorm in training mode needs more than one value per channel")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var * count / (count - 1)
    else:
        mu, var = running_mean.copy(), running_var.copy()

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
    gd = gamma.data
    out = xhat * gd.reshape(bshape) + beta.data.reshape(bshape)

    def bwd(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * gd.reshape(bshape)
        if training:
            m = xd.size // c
            gx = (
                inv_std.reshape(bshape)
                / m
                * (
                    m * gxhat
                    - gxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
                )
            )
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return (gx, ggamma, gbeta)

    return _emit("batchnorm", (x, gamma, beta), out, bwd)


def pick(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Select ``probs[i, labels[i]]`` for each row."""
    labels = np.asarray(labels, dtype=np.int64)
    if probs.data.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DimensionError(f"pick: probs{probs.shape} labels{labels.shape}")
    rows = np.arange(len(labels))
    shape = probs.shape

    def bwd(g):
        gp = np.zeros(shape)
        gp[rows, labels] = g
        return (gp,)

    return _emit("pick", (probs,), probs.data[rows, labels], bwd)
