"""Teacher/student segmentation network: backbone plus optional alignment head.

Block configurations name which decoder outputs are aggregated by HFAM and
which are distilled. ``"Da+Db"`` aggregates Da into Db and distills Db; the
three-block case runs HFAM pairwise left to right (D1 into D2, then the
result into D3) and distills D1 and D3. An aggregated stack replaces the
block output it was fused into, so later blocks consume it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import D1_WIDTH, D2_WIDTH, SegBackbone
from .hfam import HFAM
from .layers import Module, bilinear_interpolate
from .tensor import Tensor

BLOCK_CONFIGS = {
    # name: (pairs fused in order, blocks distilled)
    "D1+D2": ((("d1", "d2"),), ("d2",)),
    "D1+D3": ((("d1", "d3"),), ("d3",)),
    "D1+D2+D3": ((("d1", "d2"), ("d2", "d3")), ("d1", "d3")),
    "D2+D3": ((("d2", "d3"),), ("d3",)),
}
DEFAULT_BLOCKS = "D2+D3"


@dataclass
class SegOutput:
    logits: Tensor  # B x K x H_in x W_in
    features: dict[str, Tensor]  # raw decoder block outputs d1, d2, d3


class SegNet(Module):
    def __init__(self, num_classes: int, use_hfam: bool = True, blocks: str = DEFAULT_BLOCKS,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if blocks not in BLOCK_CONFIGS:
            raise ValueError(f"unknown block configuration {blocks!r}; valid: {sorted(BLOCK_CONFIGS)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_classes = num_classes
        self.use_hfam = use_hfam
        self.blocks = blocks
        self.backbone = SegBackbone(num_classes, rng=rng, dtype=dtype)
        widths = {"d1": D1_WIDTH, "d2": D2_WIDTH, "d3": num_classes}
        if use_hfam:
            for a, b in BLOCK_CONFIGS[blocks][0]:
                setattr(self, f"hfam_{a}_{b}", HFAM(widths[a], widths[b], rng=rng, dtype=dtype))

    @property
    def distilled_blocks(self) -> tuple[str, ...]:
        return BLOCK_CONFIGS[self.blocks][1]

    def _fusers(self, target: str):
        if not self.use_hfam:
            return []
        return [(a, getattr(self, f"hfam_{a}_{b}")) for a, b in BLOCK_CONFIGS[self.blocks][0] if b == target]

    def __call__(self, image: Tensor) -> SegOutput:
        bb = self.backbone
        H, W = image.shape[-2:]
        e1, e2, e3 = bb.encode(image)
        d1 = bb.block1(e3, e2)
        feats = {"d1": d1}
        # D1 enters the alignment head resampled onto the D2/D3 grid
        stream = {"d1": bilinear_interpolate(d1, 2 * d1.shape[-2], 2 * d1.shape[-1])} if self.use_hfam else {}

        d2 = bb.block2(d1, e1)
        feats["d2"] = d2
        for a, hfam in self._fusers("d2"):
            d2 = hfam.fuse(stream[a], d2)
        stream["d2"] = d2

        d3 = bb.block3(d2)
        feats["d3"] = d3
        for a, hfam in self._fusers("d3"):
            d3 = hfam.fuse(stream[a], d3)
        return SegOutput(bilinear_interpolate(d3, H, W), feats)


def arch_from_state(state) -> dict:
    """Recover constructor arguments from checkpoint tensor names and shapes."""
    names = list(state)
    try:
        num_classes = state["backbone.d3.conv.weight"].shape[0]
    except KeyError:
        raise ValueError("checkpoint lacks backbone.d3.conv.weight; not a SegNet checkpoint") from None
    pairs = tuple(sorted({tuple(n.split(".")[0].split("_")[1:]) for n in names if n.startswith("hfam_")}))
    if not pairs:
        return {"num_classes": num_classes, "use_hfam": False, "blocks": DEFAULT_BLOCKS}
    for blocks, (fused, _) in BLOCK_CONFIGS.items():
        if tuple(sorted(fused)) == pairs:
            return {"num_classes": num_classes, "use_hfam": True, "blocks": blocks}
    raise ValueError(f"checkpoint has an unknown alignment configuration {pairs}")


def model_from_state(state, dtype=None) -> SegNet:
    dtype = dtype or next(iter(state.values())).dtype
    model = SegNet(**arch_from_state(state), dtype=dtype)
    model.load_state_dict(state)
    return model
