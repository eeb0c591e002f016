"""Offset-based alignment and fusion of two decoder feature stacks.

An offset field has two channels: the first displaces the row coordinate,
the second the column coordinate, in pixels of the feature grid. Sampling
outside the grid contributes zero.
"""
from __future__ import annotations

import numpy as np

from .layers import BatchNorm2d, Conv2d, Module, bilinear_interpolate
from .tensor import ShapeError, Tensor, concat, relu


def feature_align(x: Tensor, delta: Tensor) -> Tensor:
    """Warp ``x`` (B x C x H x W, or C x H x W) by per-pixel offsets ``delta``.

    out[c, i, j] = sum_{h,w} x[c, h, w] * max(0, 1 - |i + d1[i,j] - h|) * max(0, 1 - |j + d2[i,j] - w|)

    which is bilinear sampling at ``(i + d1, j + d2)`` with zero fill.
    """
    unbatched = x.ndim == 3
    if unbatched:
        if delta.ndim != 3:
            raise ShapeError(f"feature_align: offsets {delta.shape} do not match features {x.shape}")
        x = x.reshape((1,) + x.shape)
        delta = delta.reshape((1,) + delta.shape)
    B, C, H, W = x.shape
    if delta.shape != (B, 2, H, W):
        raise ShapeError(f"feature_align: offsets must have shape {(B, 2, H, W)}, got {delta.shape}")

    ii, jj = np.meshgrid(np.arange(H, dtype=x.dtype), np.arange(W, dtype=x.dtype), indexing="ij")
    sy = ii[None] + delta.data[:, 0]
    sx = jj[None] + delta.data[:, 1]
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = (sy - y0).astype(x.dtype)
    fx = (sx - x0).astype(x.dtype)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    HW = H * W
    xflat = x.data.reshape(B, C, HW)
    taps = []
    out = np.zeros((B, C, HW), dtype=x.dtype)
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy = y0 + dy
        xx = x0 + dx
        valid = ((yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)).reshape(B, HW)
        idx = np.where(valid, (yy * W + xx).reshape(B, HW), 0)
        wy = (fy if dy else 1 - fy).reshape(B, HW)
        wx = (fx if dx else 1 - fx).reshape(B, HW)
        w = wy * wx * valid
        v = np.take_along_axis(xflat, idx[:, None, :], axis=2) * valid[:, None, :]
        out += w[:, None, :] * v
        taps.append((dy, dx, idx, w, wy, wx, v))

    def bw(g):
        g = g.reshape(B, C, HW)
        gx = None
        if x.requires_grad:
            base = (np.arange(B * C) * HW).reshape(B, C, 1)
            index = np.concatenate([(base + t[2][:, None, :]).ravel() for t in taps])
            weights = np.concatenate([(g * t[3][:, None, :]).ravel() for t in taps])
            gx = np.bincount(index, weights, minlength=B * C * HW).astype(x.dtype).reshape(x.shape)
        gd = None
        if delta.requires_grad:
            gsy = np.zeros((B, HW), dtype=x.dtype)
            gsx = np.zeros((B, HW), dtype=x.dtype)
            for dy, dx, _, _, wy, wx, v in taps:
                gv = (g * v).sum(axis=1)
                gsy += gv * (wx if dy else -wx)
                gsx += gv * (wy if dx else -wy)
            gd = np.stack([gsy, gsx], axis=1).reshape(B, 2, H, W)
        return gx, gd

    res = Tensor._wrap(out.reshape(B, C, H, W), (x, delta), bw, "feature_align")
    return res.reshape(res.shape[1:]) if unbatched else res


class OffsetStream(Module):
    """conv1x1 -> BatchNorm -> ReLU -> conv3x3, two output channels."""

    def __init__(self, c_in: int, rng=None, dtype=np.float32):
        self.conv1 = Conv2d(c_in, 2, 1, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(2, dtype=dtype)
        # zero-init so training starts from the identity warp
        self.conv2 = Conv2d(2, 2, 3, rng=rng, dtype=dtype, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.bn(self.conv1(x))))


class HFAM(Module):
    """Projects p to q's width, predicts one offset field per stack, aligns and adds."""

    def __init__(self, c_p: int, c_q: int, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_p = c_p
        self.c_q = c_q
        self.project = Conv2d(c_p, c_q, 1, rng=rng, dtype=dtype)
        self.stream_p = OffsetStream(2 * c_q, rng=rng, dtype=dtype)
        self.stream_q = OffsetStream(2 * c_q, rng=rng, dtype=dtype)

    def project_p(self, p: Tensor) -> Tensor:
        if p.shape[1] != self.c_p:
            raise ShapeError(f"project_p: expected {self.c_p} channels, got {p.shape[1]}")
        return self.project(p)

    def predict_offsets(self, p_adj: Tensor, q: Tensor) -> tuple[Tensor, Tensor]:
        if p_adj.shape != q.shape:
            raise ShapeError(f"predict_offsets: shapes {p_adj.shape} and {q.shape} differ")
        pq = concat([p_adj, q], axis=1)
        return self.stream_p(pq), self.stream_q(pq)

    def fuse(self, p: Tensor, q: Tensor) -> Tensor:
        p_adj = self.project_p(p)
        dp, dq = self.predict_offsets(p_adj, q)
        return feature_align(p_adj, dp) + feature_align(q, dq)

    def offsets(self, p: Tensor, q: Tensor) -> tuple[Tensor, Tensor]:
        return self.predict_offsets(self.project_p(p), q)

    def __call__(self, p: Tensor, q: Tensor, out_h: int, out_w: int) -> Tensor:
        return bilinear_interpolate(self.fuse(p, q), out_h, out_w)


def hfam_forward(p: Tensor, q: Tensor, params: HFAM, out_h: int, out_w: int) -> Tensor:
    return params(p, q, out_h, out_w)
