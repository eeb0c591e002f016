"""Feature distillation between teacher and student D3 stacks.

Both stacks are squashed with a sigmoid, turned into per-pixel channel
distributions with a tempered softmax, and compared by cross-entropy.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, clamp_min, log, sigmoid, softmax

LOG_FLOOR = 1e-12


def _channel_axis(x: Tensor) -> int:
    if x.ndim not in (3, 4):
        raise ValueError(f"expected C x H x W or B x C x H x W features, got {x.shape}")
    return x.ndim - 3


def tempered_softmax(qbar: Tensor, T: float) -> Tensor:
    """Channel softmax of ``qbar / T`` (no sigmoid)."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return softmax(qbar * (1.0 / T), axis=_channel_axis(qbar))


def tsoftmax(q: Tensor, T: float) -> Tensor:
    """sigmoid, then tempered channel softmax; every pixel sums to one."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return tempered_softmax(sigmoid(q), T)


def distillation_loss(q_t: Tensor, q_s: Tensor, T: float, diagnostics: dict | None = None) -> Tensor:
    """-(1/C) * sum_c sum_ij t_c(i,j) log s_c(i,j), averaged over the batch.

    ``q_t`` is treated as a constant. No division by H*W.
    """
    if q_t.shape != q_s.shape:
        raise ValueError(f"distillation_loss: teacher {q_t.shape} and student {q_s.shape} differ")
    axis = _channel_axis(q_s)
    C = q_s.shape[axis]
    batch = q_s.shape[0] if q_s.ndim == 4 else 1
    t = tsoftmax(q_t.detach(), T).data
    s = tsoftmax(q_s, T)
    if diagnostics is not None:
        diagnostics["log_clamped"] = diagnostics.get("log_clamped", 0) + int(np.sum(s.data < LOG_FLOOR))
    logs = log(clamp_min(s, LOG_FLOOR))
    return (logs * Tensor._wrap(t)).sum() * (-1.0 / (C * batch))


def teacher_entropy_floor(q_t: Tensor, T: float) -> float:
    """The minimum of ``distillation_loss`` over students: (1/C) * teacher entropy sum."""
    axis = _channel_axis(q_t)
    C = q_t.shape[axis]
    batch = q_t.shape[0] if q_t.ndim == 4 else 1
    t = tsoftmax(q_t.detach(), T).data
    return float(-(t * np.log(t)).sum() / (C * batch))
