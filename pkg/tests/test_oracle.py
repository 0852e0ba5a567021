"""Oracle module tests: reference convolutions and padding arithmetic."""

import numpy as np
import pytest

from spatialsim import oracle
from spatialsim.oracle import (
    FeatureMap,
    Filter,
    LayerSpec,
    ShapeError,
    dilated_conv,
    direct_conv,
    inner_padding_count,
    outer_padding_count,
    pad_for_transpose,
    padding_report,
    rotate180,
    transposed_conv,
    zero_mult_fraction,
)

import naive_ref


def fm(arr):
    return FeatureMap.from_array(np.asarray(arr, dtype=np.float32))


def filt(arr):
    return Filter.from_array(np.asarray(arr, dtype=np.float32))


# ---------------------------------------------------------------------------
# direct convolution
# ---------------------------------------------------------------------------

def test_direct_conv_identity_1x1():
    x = fm(np.arange(16, dtype=np.float32).reshape(4, 4))
    out = direct_conv(x, filt([[1.0]]), 1)
    assert np.array_equal(out.data, x.data)


def test_direct_conv_4x4_2x2_stride2_geometry():
    # 4x4 input, 2x2 filter, stride 2 -> 2x2 output
    x = fm(np.ones((4, 4)))
    out = direct_conv(x, filt(np.ones((2, 2))), 2)
    assert (out.height, out.width) == (2, 2)
    assert np.allclose(out.data, 4.0)


def test_direct_conv_matches_naive_loop():
    rng = np.random.default_rng(7)
    x = rng.integers(-4, 5, size=(2, 6, 6)).astype(np.float32)
    w = rng.integers(-4, 5, size=(3, 2, 3, 3)).astype(np.float32)
    out = direct_conv(FeatureMap.from_array(x), Filter.from_array(w), 1)
    ref = naive_ref.naive_direct_conv(x, w, 1)
    assert np.allclose(out.data, ref)


def test_direct_conv_shape_error():
    x = fm(np.ones((3, 3)))
    with pytest.raises(ShapeError):
        direct_conv(x, Filter.from_array(np.ones((1, 2, 2, 2))), 1)
    with pytest.raises(ShapeError):
        direct_conv(x, filt(np.ones((5, 5))), 1)


# ---------------------------------------------------------------------------
# rotate180
# ---------------------------------------------------------------------------

def test_rotate180_definition():
    f = filt([[1.0, 2.0], [3.0, 4.0]])
    r = rotate180(f)
    assert np.array_equal(r.plane(0, 0), [[4.0, 3.0], [2.0, 1.0]])


def test_rotate180_fixed_point_1x1():
    f = filt([[5.0]])
    assert np.array_equal(rotate180(f).data, f.data)


def test_rotate180_involution():
    rng = np.random.default_rng(3)
    f = Filter.from_array(rng.normal(size=(2, 2, 3, 3)).astype(np.float32))
    assert np.array_equal(rotate180(rotate180(f)).data, f.data)


# ---------------------------------------------------------------------------
# transpose padding
# ---------------------------------------------------------------------------

def test_pad_for_transpose_fig_geometry():
    # N=2, K=3, S=2 -> 7x7 with 5 inner + 40 outer zeros
    e = fm(np.ones((2, 2)))
    p = pad_for_transpose(e, 3, 2)
    assert (p.height, p.width) == (7, 7)
    assert int((p.data == 0).sum()) == 45
    assert inner_padding_count(2, 2) == 5
    assert outer_padding_count(2, 3, 2) == 40


def test_inner_padding_zero_at_stride_1():
    for n in range(1, 12):
        assert inner_padding_count(n, 1) == 0


def test_padding_counts_match_constructed_matrix():
    # closed forms vs counting zeros in the built matrix
    for (n, k, s) in [(4, 3, 2), (5, 3, 1), (2, 3, 2), (3, 5, 3), (1, 4, 2)]:
        inner, outer, dims = naive_ref.count_zeros_in_padded(n, n, k, s)
        assert inner_padding_count(n, s) == inner, (n, k, s)
        assert outer_padding_count(n, k, s) == outer, (n, k, s)
    # frozen derived values
    assert inner_padding_count(4, 2) == 33
    assert outer_padding_count(4, 3, 2) == 72
    assert inner_padding_count(5, 1) == 0
    assert outer_padding_count(5, 3, 1) == 56


def test_padding_counts_non_square():
    inner, outer, dims = naive_ref.count_zeros_in_padded(3, 5, 3, 2)
    assert inner_padding_count((3, 5), 2) == inner
    assert outer_padding_count((3, 5), 3, 2) == outer


def test_inner_padding_quadratic_in_stride():
    # growth in S is quadratic for fixed N >= 2: second difference constant > 0
    n = 4
    vals = [inner_padding_count(n, s) for s in range(1, 7)]
    second = [vals[i + 2] - 2 * vals[i + 1] + vals[i] for i in range(len(vals) - 2)]
    assert all(d == second[0] for d in second)
    assert second[0] > 0


# ---------------------------------------------------------------------------
# transposed convolution
# ---------------------------------------------------------------------------

def test_transposed_conv_output_dims():
    e = fm(np.ones((2, 2)))
    out = transposed_conv(e, filt(np.ones((3, 3))), 2)
    assert (out.height, out.width) == (5, 5)


def test_transposed_conv_zero_input():
    e = fm(np.zeros((3, 3)))
    out = transposed_conv(e, filt(np.ones((2, 2))), 1)
    assert np.all(out.data == 0.0)


def test_transposed_conv_matches_gradient_oracle():
    rng = np.random.default_rng(11)
    errs = rng.integers(-4, 5, size=(2, 3, 3)).astype(np.float32)
    w = rng.integers(-4, 5, size=(2, 2, 2, 2)).astype(np.float32)
    for stride in (1, 2, 3):
        in_h = stride * 2 + 2
        in_w = stride * 2 + 2
        ref = naive_ref.naive_input_gradient(errs, w, stride, in_h, in_w)
        # forward weights are (F, C, k, k); the transposed conv consumes them
        # with error channels on the in_channels axis
        got = transposed_conv(
            FeatureMap.from_array(errs),
            Filter.from_array(w.transpose(1, 0, 2, 3)),
            stride,
        )
        assert got.data.shape == ref.shape
        assert np.allclose(got.data, ref)


def test_transposed_equals_composition():
    rng = np.random.default_rng(5)
    e = FeatureMap.from_array(rng.normal(size=(1, 3, 4)).astype(np.float32))
    w = Filter.from_array(rng.normal(size=(1, 1, 3, 3)).astype(np.float32))
    via_composition = direct_conv(pad_for_transpose(e, 3, 2), rotate180(w), 1)
    assert np.array_equal(transposed_conv(e, w, 2).data, via_composition.data)


# ---------------------------------------------------------------------------
# dilated convolution
# ---------------------------------------------------------------------------

def test_dilated_conv_fig_geometry():
    # 5x4 ifmap, 2x2 errors, stride 2 -> 3x3 filter gradients
    rng = np.random.default_rng(2)
    x = rng.integers(1, 5, size=(1, 5, 4)).astype(np.float32)
    e = rng.integers(1, 5, size=(1, 2, 2)).astype(np.float32)
    out = dilated_conv(
        FeatureMap.from_array(x), FeatureMap.from_array(e), 2, out_dims=(3, 3)
    )
    assert (out.height, out.width) == (3, 3)
    ref = naive_ref.naive_filter_gradient(x, e, 2, 3)
    assert np.allclose(out.data[0], ref[0, 0])


def test_dilated_stride1_is_direct_conv():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 6, 6)).astype(np.float32)
    e = rng.normal(size=(1, 4, 4)).astype(np.float32)
    out = dilated_conv(FeatureMap.from_array(x), FeatureMap.from_array(e), 1)
    ref = direct_conv(FeatureMap.from_array(x), Filter.from_array(e[None]), 1)
    assert np.allclose(out.data, ref.data)


def test_dilated_conv_matches_filter_gradient_oracle():
    rng = np.random.default_rng(9)
    x = rng.integers(-4, 5, size=(2, 9, 9)).astype(np.float32)
    e = rng.integers(-4, 5, size=(3, 3, 3)).astype(np.float32)
    k, stride = 3, 2
    ref = naive_ref.naive_filter_gradient(x, e, stride, k)
    got = dilated_conv(
        FeatureMap.from_array(x), FeatureMap.from_array(e), stride, out_dims=(k, k)
    )
    # output planes ordered error-major: (f, c)
    idx = 0
    for f in range(3):
        for c in range(2):
            assert np.allclose(got.data[idx], ref[f, c]), (f, c)
            idx += 1


# ---------------------------------------------------------------------------
# zero-mult fractions
# ---------------------------------------------------------------------------

def test_zero_mult_fraction_fig5():
    layer = LayerSpec("fig5", "transposed", 2, 2, 3, 2)
    frac = zero_mult_fraction(layer)
    assert frac == 1.0 - 36.0 / 225.0
    assert abs(frac - 0.84) < 1e-9


def test_zero_mult_fraction_matches_enumeration():
    for (nh, nw, k, s) in [(2, 2, 3, 2), (3, 3, 3, 1), (4, 3, 2, 2), (2, 4, 3, 3)]:
        total, zero = naive_ref.naive_zero_mult_fraction_transposed(nh, nw, k, s)
        layer = LayerSpec("t", "transposed", nh, nw, k, s)
        t2, z2 = oracle.naive_schedule_products(layer)
        assert (t2, z2) == (total, zero), (nh, nw, k, s)


def test_zero_mult_fraction_stride1_border_only():
    layer = LayerSpec("t", "transposed", 3, 3, 3, 1)
    total, zero = oracle.naive_schedule_products(layer)
    # 5x5 outputs x 9 products, 9 real elements each used 9 times
    assert total == 225 and zero == 225 - 81
    assert zero_mult_fraction(layer) == zero / total


def test_zero_mult_fraction_monotone_in_stride():
    prev = -1.0
    for s in range(1, 5):
        frac = zero_mult_fraction(LayerSpec("t", "transposed", 4, 4, 3, s))
        assert frac >= prev
        prev = frac


def test_zero_mult_fraction_dilated():
    # floor-consistent dims: no out-of-bounds reads, zeros from kernel padding only
    layer = LayerSpec("d", "dilated", 9, 9, 3, 2)
    eh, ew = layer.error_dims
    assert (eh, ew) == (4, 4)
    total, zero = oracle.naive_schedule_products(layer)
    ph = 2 * (eh - 1) + 1
    assert total == 9 * ph * ph
    assert total - zero == 9 * eh * ew
    # stride 1: no padding at all
    assert zero_mult_fraction(LayerSpec("d", "dilated", 6, 6, 3, 1)) == 0.0


def test_padding_report_fields():
    rep = padding_report(LayerSpec("fig4b", "transposed", 2, 2, 3, 2))
    assert rep.inner_count == 5 and rep.outer_count == 40
    assert (rep.padded_h, rep.padded_w) == (7, 7)
    assert rep.inner_count + rep.outer_count == 45


# ---------------------------------------------------------------------------
# layer spec validation
# ---------------------------------------------------------------------------

def test_layer_spec_rejects_bad_dims():
    with pytest.raises(ValueError):
        LayerSpec("bad", "direct", 4, 4, 2, 0)
    with pytest.raises(ValueError):
        LayerSpec("bad", "weird", 4, 4, 2, 1)
    with pytest.raises(ShapeError):
        LayerSpec("bad", "direct", 2, 2, 5, 1)


def test_layer_spec_output_dims():
    assert LayerSpec("l", "direct", 4, 4, 2, 2).out_h == 2
    assert LayerSpec("l", "transposed", 2, 2, 3, 2).out_h == 5
    assert LayerSpec("l", "dilated", 9, 9, 3, 2).out_h == 3


def test_feature_map_invariants():
    with pytest.raises(ShapeError):
        FeatureMap(1, 2, 2, np.zeros(3))
    with pytest.raises(ShapeError):
        FeatureMap(0, 1, 1, np.zeros(0))
