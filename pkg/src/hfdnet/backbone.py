"""Small encoder-decoder segmentation backbone with decoder blocks D1, D2, D3."""
from __future__ import annotations

import numpy as np

from .layers import ConvBNReLU, Module, bilinear_interpolate
from .tensor import ShapeError, Tensor, concat

ENCODER_WIDTHS = (16, 32, 64)
D1_WIDTH = 32
D2_WIDTH = 32  # C_p


def upsample2(x: Tensor) -> Tensor:
    return bilinear_interpolate(x, 2 * x.shape[-2], 2 * x.shape[-1])


class SegBackbone(Module):
    """Three stride-2 encoder stages and three decoder blocks.

    D1 sits at 1/4 input resolution, D2 and D3 at 1/2. Skips from the
    encoder stage of matching resolution are concatenated into D1 and D2.
    D3 is a conv-BN-ReLU block like the others and emits ``num_classes``
    channels, so without the alignment head its output is the logit map.
    """

    def __init__(self, num_classes: int, in_channels: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        w1, w2, w3 = ENCODER_WIDTHS
        self.num_classes = num_classes
        self.enc1 = ConvBNReLU(in_channels, w1, 3, 2, rng=rng, dtype=dtype)
        self.enc2 = ConvBNReLU(w1, w2, 3, 2, rng=rng, dtype=dtype)
        self.enc3 = ConvBNReLU(w2, w3, 3, 2, rng=rng, dtype=dtype)
        self.d1 = ConvBNReLU(w3 + w2, D1_WIDTH, 3, 1, rng=rng, dtype=dtype)
        self.d2 = ConvBNReLU(D1_WIDTH + w1, D2_WIDTH, 3, 1, rng=rng, dtype=dtype)
        self.d3 = ConvBNReLU(D2_WIDTH, num_classes, 3, 1, rng=rng, dtype=dtype)

    def encode(self, image: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if image.ndim != 4:
            raise ShapeError(f"backbone: expected B x C x H x W image, got {image.shape}")
        H, W = image.shape[-2:]
        if H % 8 or W % 8:
            raise ShapeError(f"backbone: input height and width must be divisible by 8, got {H}x{W}")
        e1 = self.enc1(image)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        return e1, e2, e3

    def block1(self, e3: Tensor, e2: Tensor) -> Tensor:
        return self.d1(concat([upsample2(e3), e2], axis=1))

    def block2(self, d1: Tensor, e1: Tensor) -> Tensor:
        return self.d2(concat([upsample2(d1), e1], axis=1))

    def block3(self, d2: Tensor) -> Tensor:
        # upsample factor 1 keeps q at the resolution of p
        return self.d3(d2)

    def forward_all(self, image: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        e1, e2, e3 = self.encode(image)
        d1 = self.block1(e3, e2)
        d2 = self.block2(d1, e1)
        return d1, d2, self.block3(d2)

    def __call__(self, image: Tensor) -> tuple[Tensor, Tensor]:
        """Return ``(p, q)``: the D2 and D3 activations."""
        _, p, q = self.forward_all(image)
        return p, q


def backbone_forward(image: Tensor, model: SegBackbone) -> tuple[Tensor, Tensor]:
    return model(image)
