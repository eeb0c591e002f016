import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hfdnet.hfam import HFAM, feature_align
from hfdnet.tensor import ShapeError, Tensor, grad_check
from oracles import align_double_sum

vals = st.floats(-4, 4, allow_nan=False, width=64)


def test_zero_offsets_are_exact_identity():
    x = np.random.default_rng(0).normal(size=(3, 5, 6))
    out = feature_align(Tensor(x), Tensor(np.zeros((2, 5, 6)))).data
    assert out.tobytes() == x.tobytes()


def test_half_pixel_shift_averages_neighbours():
    x = np.array([[[0.0, 2.0, 4.0]]])
    d = np.zeros((2, 1, 3))
    d[1] = 0.5
    out = feature_align(Tensor(x), Tensor(d)).data
    np.testing.assert_allclose(out[0, 0], [1.0, 3.0, 2.0])  # last sample half outside, zero fill


def test_offsets_far_outside_give_zero():
    x = np.ones((1, 4, 4))
    d = np.full((2, 4, 4), 10.0)
    np.testing.assert_array_equal(feature_align(Tensor(x), Tensor(d)).data, 0)


def test_matches_double_sum_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = rng.normal(size=(2, 5, 5))
        d = rng.uniform(-3, 3, size=(2, 5, 5))
        np.testing.assert_allclose(feature_align(Tensor(x), Tensor(d)).data, align_double_sum(x, d), atol=1e-6)


def test_batched_equals_per_sample():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 2, 4, 5))
    d = rng.uniform(-2, 2, size=(3, 2, 4, 5))
    out = feature_align(Tensor(x), Tensor(d)).data
    for b in range(3):
        np.testing.assert_allclose(out[b], align_double_sum(x[b], d[b]), atol=1e-12)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        feature_align(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 4, 3))))
    with pytest.raises(ShapeError):
        feature_align(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 2, 4, 4))))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 4, 4), elements=vals), st.integers(-2, 2), st.integers(-2, 2))
def test_integer_shift_is_translation(x, di, dj):
    d = np.zeros((2, 4, 4))
    d[0], d[1] = di, dj
    out = feature_align(Tensor(x), Tensor(d)).data
    expect = np.zeros_like(x)
    for i in range(4):
        for j in range(4):
            if 0 <= i + di < 4 and 0 <= j + dj < 4:
                expect[:, i, j] = x[:, i + di, j + dj]
    np.testing.assert_allclose(out, expect, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (1, 4, 4), elements=vals), arrays(np.float64, (2, 4, 4), elements=st.floats(-3, 3, width=64)))
def test_linear_in_features(x, d):
    a = feature_align(Tensor(2.5 * x), Tensor(d)).data
    b = 2.5 * feature_align(Tensor(x), Tensor(d)).data
    np.testing.assert_allclose(a, b, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 4, 4), elements=st.floats(-3, 3, width=64)))
def test_weights_are_a_partition_of_unity_inside(d):
    # constant input: inside samples read exactly 1, outside reads shrink toward 0
    out = feature_align(Tensor(np.ones((1, 4, 4))), Tensor(d)).data[0]
    assert np.all(out <= 1 + 1e-12) and np.all(out >= -1e-12)
    si = np.arange(4)[:, None] + d[0]
    sj = np.arange(4)[None, :] + d[1]
    inside = (si >= 0) & (si <= 3) & (sj >= 0) & (sj <= 3)
    np.testing.assert_allclose(out[inside], 1.0, atol=1e-12)


def test_gradients_both_inputs():
    rng = np.random.default_rng(9)
    for _ in range(10):
        x = rng.normal(size=(2, 4, 4))
        d = rng.integers(-2, 2, size=(2, 4, 4)) + rng.uniform(0.05, 0.95, size=(2, 4, 4))
        R = Tensor(rng.normal(size=x.shape))
        assert grad_check(lambda t: (feature_align(t, Tensor(d)) * R).sum(), Tensor(x)) < 1e-4
        assert grad_check(lambda t: (feature_align(Tensor(x), t) * R).sum(), Tensor(d)) < 1e-4


def test_hfam_starts_as_plain_sum():
    rng = np.random.default_rng(0)
    h = HFAM(3, 2, rng=rng, dtype=np.float64)
    p = Tensor(rng.normal(size=(2, 3, 4, 4)))
    q = Tensor(rng.normal(size=(2, 2, 4, 4)))
    dp, dq = h.offsets(p, q)
    np.testing.assert_array_equal(dp.data, 0)
    np.testing.assert_array_equal(dq.data, 0)
    np.testing.assert_allclose(h.fuse(p, q).data, h.project_p(p).data + q.data)


def test_hfam_output_size_and_channel_check():
    h = HFAM(3, 2, dtype=np.float64)
    out = h(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 2, 4, 4))), 16, 16)
    assert out.shape == (1, 2, 16, 16)
    with pytest.raises(ShapeError):
        h(Tensor(np.zeros((1, 4, 4, 4))), Tensor(np.zeros((1, 2, 4, 4))), 16, 16)
