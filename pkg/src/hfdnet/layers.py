"""Convolution, batch normalization, activations and bilinear resizing."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, relu, sigmoid  # noqa: F401  (re-exported)

__all__ = [
    "Module",
    "Conv2d",
    "BatchNorm2d",
    "ConvBNReLU",
    "conv2d",
    "batchnorm",
    "relu",
    "sigmoid",
    "bilinear_interpolate",
    "interp_matrix",
]


# -- functional ---------------------------------------------------------------
def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded cross-correlation over a B x C x H x W batch."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: expected B x C x H x W input, got {x.shape}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if C != Ci:
        raise ShapeError(f"conv2d: input has {C} channels but kernel expects {Ci} (kernel {weight.shape})")
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {weight.shape}")
    s, p = stride, padding
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]  # B,C,Ho,Wo,kh,kw
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(C * kh * kw, B * Ho * Wo)
    w2 = weight.data.reshape(O, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(O, -1)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gb = g2.sum(axis=1) if bias is not None else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(C, kh, kw, B, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += gcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._wrap(np.ascontiguousarray(out), parents, bw, "conv2d")


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (batch, height, width).

    In training mode the running statistics are updated in place.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm: expected B x C x H x W input, got {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,):
        raise ShapeError(f"batchnorm: {C} channels but parameters have shape {gamma.shape}")
    n = B * H * W
    axes = (0, 2, 3)
    if training:
        if n < 2:
            raise ValueError("batchnorm: training mode needs at least 2 values per channel")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            gx = (inv[None, :, None, None] / n) * (
                n * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, gg, gb

    return Tensor._wrap(out, (x, gamma, beta), bw, "batchnorm")


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Align-corners linear interpolation weights, shape n_out x n_in."""
    if n_out < 1 or n_in < 1:
        raise ValueError(f"interpolation extents must be >= 1 (got in={n_in}, out={n_out})")
    A = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1 or n_in == 1:
        A[:, 0] = 1.0
        return A
    src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - lo
    rows = np.arange(n_out)
    A[rows, lo] = 1.0 - frac
    A[rows, lo + 1] += frac
    return A


def bilinear_interpolate(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the last two axes with align-corners bilinear sampling."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_interpolate: output size must be >= 1, got {out_h}x{out_w}")
    H, W = x.shape[-2:]
    if (H, W) == (out_h, out_w):
        return x
    Ah = interp_matrix(H, out_h, x.dtype)
    Aw = interp_matrix(W, out_w, x.dtype)
    out = Ah @ x.data @ Aw.T

    def bw(g):
        return (Ah.T @ g @ Aw,)

    return Tensor._wrap(out, (x,), bw, "interpolate")


# -- modules ----------------------------------------------------------------
class Module:
    """Minimal parameter container.

    Parameters are ``Tensor`` attributes, buffers are numpy arrays named in
    ``_buffers``, children are ``Module`` attributes; all are enumerated in
    attribute definition order.
    """

    _buffers: tuple[str, ...] = ()
    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                out[prefix + key] = val.data
            elif isinstance(val, Module):
                out.update(val.state_dict(prefix + key + "."))
            elif key in self._buffers:
                out[prefix + key] = val
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        extra = [k for k in state if k not in own]
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for k, arr in own.items():
            src = np.asarray(state[k])
            if src.shape != arr.shape:
                raise ShapeError(f"{k}: expected shape {arr.shape}, got {src.shape}")
            arr[...] = src

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for val in vars(self).values():
            if isinstance(val, Module):
                val.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, padding: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32, zero_init: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(c_in * k * k)
        w = np.zeros((c_out, c_in, k, k)) if zero_init else rng.uniform(-bound, bound, (c_out, c_in, k, k))
        self.weight = Tensor(w, requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, dtype=dtype)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, c: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(c), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(c), requires_grad=True, dtype=dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                         self.training, self.momentum, self.eps)


class ConvBNReLU(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, rng=None, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, k, stride, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(c_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.bn(self.conv(x)))
