"""Minimal dense-tensor engine with reverse-mode differentiation.

Stores 32-bit row-major numpy arrays and records a tape of executed
operations; ``backward`` walks the tape once in reverse topological
order and accumulates gradients into every trainable ancestor.
Reductions use a fixed accumulation order so identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, StateError, ValidationError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (used for evaluation)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense n-dimensional float array participating in autodiff.

    ``grad`` accumulates across backward calls until explicitly zeroed.
    ``frozen`` marks parameters of a finished task: their buffer is made
    read-only and the optimizer refuses to step them.
    """

    __slots__ = ("data", "requires_grad", "grad", "frozen", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.frozen = False
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def freeze(self) -> None:
        """Make the value buffer immutable and drop it from training."""
        self.requires_grad = False
        self.grad = None
        self.frozen = True
        self.data.flags.writeable = False

    def detach(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)


def _wrap(data, parents: Sequence[Tensor], bwd: Callable) -> Tensor:
    """Package an op result, recording the tape edge when grads flow."""
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bwd
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every trainable ancestor of a scalar loss."""
    if loss.data.size != 1:
        raise ValidationError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            # leaf parameter
            node.accumulate_grad(g)
            continue
        if node._backward is not None:
            node._backward(g, grads)  # type: ignore[call-arg]


def _send(grads: dict, parent: Tensor, g: np.ndarray) -> None:
    """Route a gradient contribution toward a parent node."""
    if not (parent.requires_grad or parent._backward is not None):
        return
    key = id(parent)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def bwd(g, grads):
        _send(grads, a, g)
        _send(grads, b, g)

    return _wrap(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out_data = a.data * b.data

    def bwd(g, grads):
        _send(grads, a, g * b.data)
        _send(grads, b, g * a.data)

    return _wrap(out_data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out_data = a.data * a.data.dtype.type(s)

    def bwd(g, grads):
        _send(grads, a, g * a.data.dtype.type(s))

    return _wrap(out_data, (a,), bwd)


def tsum(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def bwd(g, grads):
        _send(grads, a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True))

    return _wrap(out_data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def bwd(g, grads):
        # subgradient 0 at exactly 0
        _send(grads, a, g * (a.data > 0))

    return _wrap(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution ops
# ---------------------------------------------------------------------------


def conv_depthwise(x: Tensor, filters: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Spatial convolution applied independently to each channel.

    ``x`` is (B, M, H, W); ``filters`` is (M, k, k). Output channel m
    depends only on input channel m.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv_depthwise input must be 4-d, got shape {x.data.shape}")
    if filters.data.ndim != 3 or filters.data.shape[1] != filters.data.shape[2]:
        raise DimensionError(f"conv_depthwise filters must be (M, k, k), got {filters.data.shape}")
    if stride < 1:
        raise ValidationError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValidationError(f"padding must be non-negative, got {padding}")
    B, M, H, W = x.data.shape
    Mf, k, _ = filters.data.shape
    if Mf != M:
        raise DimensionError(f"channel mismatch: input has {M} channels, filters cover {Mf}")
    if k > H + 2 * padding or k > W + 2 * padding:
        raise DimensionError(
            f"kernel {k} exceeds padded spatial extent {(H + 2 * padding, W + 2 * padding)}"
        )
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1

    if padding:
        xp = np.zeros((B, M, H + 2 * padding, W + 2 * padding), dtype=x.data.dtype)
        xp[:, :, padding : padding + H, padding : padding + W] = x.data
    else:
        xp = x.data

    out_data = np.zeros((B, M, Ho, Wo), dtype=x.data.dtype)
    f = filters.data
    for i in range(k):
        for j in range(k):
            out_data += (
                xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
                * f[None, :, i, j, None, None]
            )

    def bwd(g, grads):
        if x.requires_grad or x._backward is not None:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += (
                        g * f[None, :, i, j, None, None]
                    )
            if padding:
                gx = gxp[:, :, padding : padding + H, padding : padding + W].copy()
            else:
                gx = gxp
            _send(grads, x, gx)
        if filters.requires_grad or filters._backward is not None:
            gf = np.zeros_like(f)
            for i in range(k):
                for j in range(k):
                    window = xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
                    gf[:, i, j] = (g * window).sum(axis=(0, 2, 3))
            _send(grads, filters, gf)

    return _wrap(out_data, (x, filters), bwd)


def conv_pointwise(x: Tensor, filters: Tensor) -> Tensor:
    """1x1 cross-channel projection: out[b,n] = sum_m filters[m,n] * x[b,m]."""
    if x.data.ndim != 4:
        raise DimensionError(f"conv_pointwise input must be 4-d, got shape {x.data.shape}")
    if filters.data.ndim != 2:
        raise DimensionError(f"conv_pointwise filters must be (M, N), got {filters.data.shape}")
    B, M, H, W = x.data.shape
    if filters.data.shape[0] != M:
        raise DimensionError(
            f"channel mismatch: input has {M} channels, filters expect {filters.data.shape[0]}"
        )
    out_data = np.einsum("bmhw,mn->bnhw", x.data, filters.data)

    def bwd(g, grads):
        if x.requires_grad or x._backward is not None:
            _send(grads, x, np.einsum("bnhw,mn->bmhw", g, filters.data))
        if filters.requires_grad or filters._backward is not None:
            _send(grads, filters, np.einsum("bmhw,bnhw->mn", x.data, g))

    return _wrap(out_data, (x, filters), bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise DimensionError("concat_channels expects 4-d inputs")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise DimensionError(
            f"concat_channels non-channel dims differ: {a.data.shape} vs {b.data.shape}"
        )
    na = a.data.shape[1]
    out_data = np.concatenate([a.data, b.data], axis=1)

    def bwd(g, grads):
        _send(grads, a, g[:, :na].copy())
        _send(grads, b, g[:, na:].copy())

    return _wrap(out_data, (a, b), bwd)


def subsample(x: Tensor, stride: int) -> Tensor:
    """Keep every ``stride``-th pixel along both spatial axes."""
    if x.data.ndim != 4:
        raise DimensionError("subsample expects a 4-d input")
    if stride < 1:
        raise ValidationError(f"stride must be positive, got {stride}")
    out_data = np.ascontiguousarray(x.data[:, :, ::stride, ::stride])

    def bwd(g, grads):
        gx = np.zeros_like(x.data)
        gx[:, :, ::stride, ::stride] = g
        _send(grads, x, gx)

    return _wrap(out_data, (x,), bwd)


def pad_channels(x: Tensor, extra: int) -> Tensor:
    """Append ``extra`` all-zero channels."""
    if x.data.ndim != 4:
        raise DimensionError("pad_channels expects a 4-d input")
    if extra < 0:
        raise ValidationError(f"extra channels must be non-negative, got {extra}")
    B, C, H, W = x.data.shape
    out_data = np.concatenate([x.data, np.zeros((B, extra, H, W), dtype=x.data.dtype)], axis=1)

    def bwd(g, grads):
        _send(grads, x, g[:, :C].copy())

    return _wrap(out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# pooling, linear, loss
# ---------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool input must be 4-d, got shape {x.data.shape}")
    B, C, H, W = x.data.shape
    if H * W < 1:
        raise DimensionError(f"empty spatial dims {(H, W)}")
    out_data = x.data.mean(axis=(2, 3))

    def bwd(g, grads):
        gx = np.broadcast_to(
            (g / x.data.dtype.type(H * W))[:, :, None, None], x.data.shape
        ).astype(x.data.dtype, copy=True)
        _send(grads, x, gx)

    return _wrap(out_data, (x,), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(
            f"linear expects (B,D) x (D,C) + (C,), got {x.data.shape}, "
            f"{weight.data.shape}, {bias.data.shape}"
        )
    if x.data.shape[1] != weight.data.shape[0] or weight.data.shape[1] != bias.data.shape[0]:
        raise DimensionError(
            f"linear dimension mismatch: {x.data.shape} x {weight.data.shape} + {bias.data.shape}"
        )
    out_data = x.data @ weight.data + bias.data

    def bwd(g, grads):
        _send(grads, x, g @ weight.data.T)
        _send(grads, weight, x.data.T @ g)
        _send(grads, bias, g.sum(axis=0))

    return _wrap(out_data, (x, weight, bias), bwd)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be (B, C), got shape {logits.data.shape}")
    y = np.asarray(labels)
    B, C = logits.data.shape
    if y.shape != (B,):
        raise ValidationError(f"labels must be a length-{B} vector, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= C):
        raise ValidationError(f"labels out of range [0, {C}): min={y.min()}, max={y.max()}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    exp = np.exp(shifted)
    sumexp = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sumexp)
    loss = np.asarray(-log_probs[np.arange(B), y].mean(), dtype=z.dtype)

    def bwd(g, grads):
        probs = exp / sumexp
        probs[np.arange(B), y] -= 1
        _send(grads, logits, probs * (g / z.dtype.type(B)))

    return _wrap(loss, (logits,), bwd)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Normalize by batch moments; returns (out, batch_mean, batch_var).

    Moments are per channel over the batch and spatial axes; variance is
    the biased estimate. Callers own the running-moment update.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"batch norm input must be 4-d, got shape {x.data.shape}")
    B, C, H, W = x.data.shape
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise DimensionError(
            f"gamma/beta must be ({C},), got {gamma.data.shape} and {beta.data.shape}"
        )
    m = B * H * W
    if m < 2:
        raise ValidationError(f"batch norm needs >= 2 values per channel in train mode, got {m}")
    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bwd(g, grads):
        if beta.requires_grad or beta._backward is not None:
            _send(grads, beta, g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad or gamma._backward is not None:
            _send(grads, gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad or x._backward is not None:
            gxhat = g * gamma.data[None, :, None, None]
            mean_g = gxhat.mean(axis=(0, 2, 3))
            mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3))
            gx = inv_std[None, :, None, None] * (
                gxhat - mean_g[None, :, None, None] - xhat * mean_gx[None, :, None, None]
            )
            _send(grads, x, gx.astype(x.data.dtype, copy=False))

    out = _wrap(out_data, (x, gamma, beta), bwd)
    return out, mean, var


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var, eps: float) -> Tensor:
    """Normalize by running moments; pure function of its inputs."""
    if x.data.ndim != 4:
        raise DimensionError(f"batch norm input must be 4-d, got shape {x.data.shape}")
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise DimensionError(
            f"gamma/beta must be ({C},), got {gamma.data.shape} and {beta.data.shape}"
        )
    inv_std = 1.0 / np.sqrt(running_var + x.data.dtype.type(eps))
    xhat = (x.data - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bwd(g, grads):
        if beta.requires_grad or beta._backward is not None:
            _send(grads, beta, g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad or gamma._backward is not None:
            _send(grads, gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad or x._backward is not None:
            gx = g * (gamma.data * inv_std)[None, :, None, None]
            _send(grads, x, gx.astype(x.data.dtype, copy=False))

    return _wrap(out_data, (x, gamma, beta), bwd)
