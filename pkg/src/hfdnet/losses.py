"""Segmentation losses on class-logit maps, plus the student's total loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hfdm import distillation_loss
from .tensor import Tensor, exp, log_softmax, power, softmax

FOCAL_VARIANTS = ("standard", "literal")


@dataclass
class LossConfig:
    alpha: float = 0.5
    gamma: float = 2.0
    lam: float = 25.0
    temperature: float = 5.0
    focal_variant: str = "standard"

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.focal_variant not in FOCAL_VARIANTS:
            raise ValueError(f"focal_variant must be one of {FOCAL_VARIANTS}, got {self.focal_variant!r}")


def _batched(m: Tensor, y) -> tuple[Tensor, np.ndarray]:
    y = np.asarray(y)
    if m.ndim == 3:
        m = m.reshape((1,) + m.shape)
        y = y[None]
    if m.ndim != 4 or y.shape != (m.shape[0],) + m.shape[2:]:
        raise ValueError(f"logits {m.shape} and labels {y.shape} do not match")
    K = m.shape[1]
    bad = (y < 0) | (y >= K)
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"label out of range [0, {K}) at pixel {pos}: {int(y[pos])}")
    return m, y


def _one_hot(y: np.ndarray, K: int, dtype) -> np.ndarray:
    return (y[:, None] == np.arange(K)[None, :, None, None]).astype(dtype)


def softmax_probs(m: Tensor) -> Tensor:
    return softmax(m, axis=m.ndim - 3)


def _true_class_logp(m: Tensor, y: np.ndarray) -> Tensor:
    onehot = Tensor._wrap(_one_hot(y, m.shape[1], m.dtype))
    return (log_softmax(m, axis=1) * onehot).sum(axis=1)


def cross_entropy(m: Tensor, y) -> Tensor:
    """Mean over pixels (and batch) of -log p_true."""
    m, y = _batched(m, y)
    return _true_class_logp(m, y).mean() * -1.0


def focal_loss(m: Tensor, y, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    m, y = _batched(m, y)
    if cfg.focal_variant == "standard":
        logp_t = _true_class_logp(m, y)
        mod = power(1.0 - exp(logp_t), cfg.gamma)
        return (mod * logp_t).mean() * -cfg.alpha
    # as printed: (1 - p * e^{-y})^gamma * y * log p per channel, y one-hot
    onehot = _one_hot(y, m.shape[1], m.dtype)
    logp = log_softmax(m, axis=1)
    mod = power(1.0 - exp(logp) * Tensor._wrap(np.exp(-onehot)), cfg.gamma)
    per_pixel = (mod * Tensor._wrap(onehot) * logp).sum(axis=1)
    return per_pixel.mean() * -cfg.alpha


def seg_loss_terms(m: Tensor, y, cfg: LossConfig | None = None) -> tuple[Tensor, Tensor]:
    return cross_entropy(m, y), focal_loss(m, y, cfg)


def seg_loss(m: Tensor, y, cfg: LossConfig | None = None) -> Tensor:
    l_c, l_f = seg_loss_terms(m, y, cfg)
    return l_c + l_f


def total_loss(m_s: Tensor, y, q_t: Tensor, q_s: Tensor, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    ls = seg_loss(m_s, y, cfg)
    if cfg.lam == 0:
        return ls
    return ls + distillation_loss(q_t, q_s, cfg.temperature) * cfg.lam

