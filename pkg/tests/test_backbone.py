import numpy as np
import pytest

from hfdnet.backbone import D2_WIDTH, SegBackbone
from hfdnet.model import BLOCK_CONFIGS, SegNet
from hfdnet.tensor import ShapeError, Tensor, no_grad


def test_backbone_shapes():
    bb = SegBackbone(3, rng=np.random.default_rng(0))
    p, q = bb(Tensor(np.zeros((2, 1, 32, 48), dtype=np.float32)))
    assert p.shape == (2, D2_WIDTH, 16, 24)
    assert q.shape == (2, 3, 16, 24)


def test_backbone_rejects_bad_sizes():
    bb = SegBackbone(2)
    with pytest.raises(ShapeError, match="divisible by 8"):
        bb(Tensor(np.zeros((1, 1, 30, 32), dtype=np.float32)))
    with pytest.raises(ShapeError):
        bb(Tensor(np.zeros((1, 32, 32), dtype=np.float32)))


def test_independent_parameters_same_shapes():
    a = SegNet(2, rng=np.random.default_rng(0)).state_dict()
    b = SegNet(2, rng=np.random.default_rng(1)).state_dict()
    assert list(a) == list(b)
    assert all(a[k].shape == b[k].shape for k in a)
    assert a["backbone.enc1.conv.weight"].tobytes() != b["backbone.enc1.conv.weight"].tobytes()


@pytest.mark.parametrize("blocks", sorted(BLOCK_CONFIGS))
def test_segnet_logits_match_input(blocks):
    net = SegNet(2, blocks=blocks, rng=np.random.default_rng(0))
    out = net(Tensor(np.random.default_rng(1).uniform(size=(2, 1, 32, 32)).astype(np.float32)))
    assert out.logits.shape == (2, 2, 32, 32)
    assert out.features["d1"].shape == (2, 32, 8, 8)
    assert out.features["d3"].shape == (2, 2, 16, 16)
    assert all(b in out.features for b in net.distilled_blocks)


def test_fresh_alignment_head_equals_projection_sum():
    # zero-initialized offset heads leave the head a learned 1x1 projection plus q
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(size=(2, 1, 16, 16)).astype(np.float32))
    net = SegNet(2, rng=np.random.default_rng(3))
    with no_grad():
        out = net(x)
        h = net.hfam_d2_d3
        fused = h.project_p(out.features["d2"]).data + out.features["d3"].data
    from hfdnet.layers import bilinear_interpolate

    np.testing.assert_allclose(out.logits.data, bilinear_interpolate(Tensor(fused), 16, 16).data, atol=1e-5)


def test_no_hfam_logits_are_upsampled_d3():
    from hfdnet.layers import bilinear_interpolate

    net = SegNet(2, use_hfam=False, rng=np.random.default_rng(0))
    with no_grad():
        out = net(Tensor(np.ones((2, 1, 16, 16), dtype=np.float32)))
    np.testing.assert_array_equal(out.logits.data, bilinear_interpolate(out.features["d3"], 16, 16).data)
    assert not any(k.startswith("hfam") for k in net.state_dict())


def test_unknown_blocks():
    with pytest.raises(ValueError, match="valid"):
        SegNet(2, blocks="D9")
