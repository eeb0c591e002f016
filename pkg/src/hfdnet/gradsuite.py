"""Finite-difference checks for every differentiable operation, at float64.

Each case draws a seeded random instance, reduces the op output to a scalar
with a fixed random weighting, and compares backward against central
differences via :func:`hfdnet.tensor.grad_check`.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import hfdm, losses
from .hfam import HFAM, feature_align
from .layers import batchnorm, bilinear_interpolate, conv2d
from .model import SegNet
from .tensor import Tensor, grad_check, relu, sigmoid

EPS = 1e-5
TOLERANCE = 1e-4


@dataclass
class CaseResult:
    name: str
    max_error: float
    instances: int
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_error < TOLERANCE


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * Tensor._wrap(w)).sum()


def _off_integer(rng: np.random.Generator, shape, lo: float, hi: float, margin: float = 0.05) -> np.ndarray:
    """Uniform values whose fractional part stays ``margin`` away from the bilinear kinks."""
    base = rng.integers(int(np.floor(lo)), int(np.ceil(hi)), size=shape).astype(np.float64)
    return base + rng.uniform(margin, 1 - margin, size=shape)


def _checks_conv(rng):
    B, C, O, k = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    x = rng.normal(size=(B, C, 5, 5))
    w = rng.normal(size=(O, C, k, k))
    b = rng.normal(size=O)
    probe = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, k // 2)
    R = rng.normal(size=probe.shape)
    yield lambda t: _weighted(conv2d(t, Tensor(w), Tensor(b), stride, k // 2), R), x
    yield lambda t: _weighted(conv2d(Tensor(x), t, Tensor(b), stride, k // 2), R), w
    yield lambda t: _weighted(conv2d(Tensor(x), Tensor(w), t, stride, k // 2), R), b


def _checks_batchnorm(rng):
    x = rng.normal(size=(3, 2, 3, 3)) * 2 + 0.5
    g = rng.uniform(0.5, 1.5, 2)
    b = rng.normal(size=2)
    R = rng.normal(size=x.shape)

    def bn(xt, gt, bt, training=True):
        return batchnorm(xt, gt, bt, np.zeros(2), np.ones(2), training)

    yield lambda t: _weighted(bn(t, Tensor(g), Tensor(b)), R), x
    yield lambda t: _weighted(bn(Tensor(x), t, Tensor(b)), R), g
    yield lambda t: _weighted(bn(Tensor(x), Tensor(g), t), R), b
    yield lambda t: _weighted(bn(t, Tensor(g), Tensor(b), training=False), R), x


def _checks_sigmoid(rng):
    x = rng.normal(size=(3, 4)) * 3
    R = rng.normal(size=x.shape)
    yield lambda t: _weighted(sigmoid(t), R), x


def _checks_relu(rng):
    x = rng.normal(size=(4, 5))
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    R = rng.normal(size=x.shape)
    yield lambda t: _weighted(relu(t), R), x


def _checks_tsoftmax(rng):
    q = rng.normal(size=(3, 4, 4)) * 2
    T = float(rng.choice([1.0, 5.0, 10.0, 50.0]))
    R = rng.normal(size=q.shape)
    yield lambda t: _weighted(hfdm.tsoftmax(t, T), R), q


def _checks_interpolate(rng):
    x = rng.normal(size=(2, 3, 4))
    oh, ow = int(rng.integers(1, 7)), int(rng.integers(2, 8))
    R = rng.normal(size=(2, oh, ow))
    yield lambda t: _weighted(bilinear_interpolate(t, oh, ow), R), x


def _checks_align_features(rng):
    x = rng.normal(size=(2, 5, 5))
    d = _off_integer(rng, (2, 5, 5), -2, 2)
    R = rng.normal(size=x.shape)
    yield lambda t: _weighted(feature_align(t, Tensor(d)), R), x


def _checks_align_offsets(rng):
    x = rng.normal(size=(2, 5, 5))
    d = _off_integer(rng, (2, 5, 5), -2, 2)
    R = rng.normal(size=x.shape)
    yield lambda t: _weighted(feature_align(Tensor(x), t), R), d


def _seg_instance(rng, K=3):
    m = rng.normal(size=(2, K, 4, 4)) * 2
    y = rng.integers(0, K, size=(2, 4, 4))
    return m, y


def _checks_cross_entropy(rng):
    m, y = _seg_instance(rng)
    yield lambda t: losses.cross_entropy(t, y), m


def _checks_focal_standard(rng):
    m, y = _seg_instance(rng)
    cfg = losses.LossConfig(focal_variant="standard")
    yield lambda t: losses.focal_loss(t, y, cfg), m


def _checks_focal_literal(rng):
    m, y = _seg_instance(rng)
    cfg = losses.LossConfig(focal_variant="literal")
    yield lambda t: losses.focal_loss(t, y, cfg), m


def _checks_seg_loss(rng):
    m, y = _seg_instance(rng)
    yield lambda t: losses.seg_loss(t, y), m


def _checks_distillation(rng):
    qt = rng.normal(size=(2, 3, 4, 4)) * 2
    qs = rng.normal(size=(2, 3, 4, 4)) * 2
    T = float(rng.choice([1.0, 5.0]))
    yield lambda t: hfdm.distillation_loss(Tensor(qt), t, T), qs


def _checks_total(rng):
    K = 2
    m = rng.normal(size=(2, K, 8, 8))
    y = rng.integers(0, K, size=(2, 8, 8))
    qt = rng.normal(size=(2, K, 4, 4))
    qs = rng.normal(size=(2, K, 4, 4))
    cfg = losses.LossConfig()
    yield lambda t: losses.total_loss(t, y, Tensor(qt), Tensor(qs), cfg), m
    yield lambda t: losses.total_loss(Tensor(m), y, Tensor(qt), t, cfg), qs


def _random_hfam(rng, c_p, c_q):
    h = HFAM(c_p, c_q, rng=rng, dtype=np.float64)
    h.project.weight.data[...] = rng.normal(size=h.project.weight.shape) * 0.5
    # random offset heads so the warp is away from the identity (integer) point
    h.stream_p.conv2.weight.data[...] = rng.normal(size=h.stream_p.conv2.weight.shape) * 0.7
    h.stream_q.conv2.weight.data[...] = rng.normal(size=h.stream_q.conv2.weight.shape) * 0.7
    h.stream_p.conv2.bias.data[...] = rng.uniform(0.2, 0.8, 2)
    h.stream_q.conv2.bias.data[...] = rng.uniform(-0.8, -0.2, 2)
    return h


def _checks_hfam(rng):
    c_p, c_q = 3, 2
    h = _random_hfam(rng, c_p, c_q)
    p = rng.normal(size=(2, c_p, 4, 4))
    q = rng.normal(size=(2, c_q, 4, 4))
    R = rng.normal(size=(2, c_q, 8, 8))
    yield lambda t: _weighted(h(t, Tensor(q), 8, 8), R), p
    yield lambda t: _weighted(h(Tensor(p), t, 8, 8), R), q


def _checks_backbone(rng):
    net = SegNet(2, use_hfam=True, rng=rng, dtype=np.float64)
    # zero-initialized offset heads and biases would leave parts of the graph unprobed
    for name, p in net.named_parameters():
        if not np.any(p.data):
            p.data[...] = rng.normal(size=p.shape) * 0.3
    x = rng.uniform(0, 1, size=(2, 1, 16, 16))
    y = rng.integers(0, 2, size=(2, 16, 16))
    yield lambda t: losses.seg_loss(net(t).logits, y), x


CASES: dict[str, Callable] = {
    "conv2d": _checks_conv,
    "batchnorm": _checks_batchnorm,
    "sigmoid": _checks_sigmoid,
    "relu": _checks_relu,
    "tsoftmax": _checks_tsoftmax,
    "bilinear_interpolate": _checks_interpolate,
    "feature_align[x]": _checks_align_features,
    "feature_align[offsets]": _checks_align_offsets,
    "cross_entropy": _checks_cross_entropy,
    "focal_loss[standard]": _checks_focal_standard,
    "focal_loss[literal]": _checks_focal_literal,
    "seg_loss": _checks_seg_loss,
    "distillation_loss": _checks_distillation,
    "total_loss": _checks_total,
    "hfam_forward": _checks_hfam,
    "segnet_end_to_end": _checks_backbone,
}
# whole-network check is the slowest and not one of the per-op checks
_MAX_INSTANCES = {"segnet_end_to_end": 3}


def run_case(name: str, instances: int = 10, seed: int = 0) -> CaseResult:
    make = CASES[name]
    worst = 0.0
    n = min(instances, _MAX_INSTANCES.get(name, instances))
    start = time.perf_counter()
    for i in range(n):
        rng = np.random.default_rng([seed, i, len(name)])
        for f, x in make(rng):
            worst = max(worst, grad_check(f, Tensor(x), EPS))
    return CaseResult(name, worst, n, time.perf_counter() - start)


def run_suite(instances: int = 10, seed: int = 0, names=None) -> list[CaseResult]:
    return [run_case(n, instances, seed) for n in (names or CASES)]
