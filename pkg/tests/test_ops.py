import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiergan import ops
from tiergan.errors import GeometryError, ShapeError
from tiergan.ops import ConvGeometry
from tiergan.tensor import Tensor, backward, precision

from oracles import naive_conv2d, naive_conv2d_transpose, naive_matmul_bias


class TestDense:
    def test_identity(self):
        y = ops.dense_forward(np.ones((1, 2)), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(y.data, [[1, 1]])

    def test_matches_naive_matmul(self):
        w, b, x = [[1.0, 2.0], [3.0, 4.0]], [0.0, 0.0], [[1.0, 1.0]]
        expected = naive_matmul_bias(x, w, b)
        assert expected == [[4.0, 6.0]]
        np.testing.assert_array_equal(ops.dense_forward(np.array(x), np.array(w), np.array(b)).data, expected)

    def test_zero_input_passes_bias(self):
        y = ops.dense_forward(np.zeros((1, 2)), np.ones((2, 2)), np.array([5.0, 5.0]))
        np.testing.assert_array_equal(y.data, [[5, 5]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 3\).*\(2, 2\)"):
            ops.dense_forward(np.zeros((1, 3)), np.zeros((2, 2)), np.zeros(2))


class TestConvGeometry:
    @pytest.mark.parametrize("size", range(1, 17))
    def test_shape_algebra_sweep(self, size):
        for k in range(1, 6):
            for s in range(1, 4):
                for p in range(0, 3):
                    g = ConvGeometry(k, s, p)
                    if size + 2 * p >= k:
                        ho, wo = g.conv_out(size, size)
                        assert ho == (size + 2 * p - k) // s + 1 == wo
                        y = ops.conv2d_forward(np.zeros((1, 1, size, size)), np.zeros((1, 1, k, k)), np.zeros(1),
                                               stride=s, padding=p)
                        assert y.shape == (1, 1, ho, wo)
                    else:
                        with pytest.raises(GeometryError):
                            g.conv_out(size, size)
                    t = (size - 1) * s - 2 * p + k
                    if t >= 1:
                        assert g.transpose_out(size, size) == (t, t)
                        y = ops.conv2d_transpose_forward(np.zeros((1, 1, size, size)), np.zeros((1, 1, k, k)),
                                                         np.zeros(1), stride=s, padding=p)
                        assert y.shape == (1, 1, t, t)
                    else:
                        with pytest.raises(GeometryError):
                            g.transpose_out(size, size)

    def test_transpose_16_to_32(self):
        assert ConvGeometry(4, 2, 1).transpose_out(16, 16) == (32, 32)


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 1, 5, 5)).astype(np.float32)
        y = ops.conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(y.data, x)

    def test_constant_image_all_ones_kernel(self):
        c = 0.37
        y = ops.conv2d_forward(np.full((1, 1, 6, 6), c), np.ones((1, 1, 3, 3)), np.zeros(1))
        np.testing.assert_allclose(y.data, 9 * c, rtol=1e-6)

    def test_matches_nested_loops_4x4(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        k = rng.standard_normal((1, 1, 3, 3))
        with precision(np.float64):
            y = ops.conv2d_forward(x, k, np.zeros(1))
        assert y.shape == (1, 1, 2, 2)
        np.testing.assert_allclose(y.data, naive_conv2d(x, k, np.zeros(1), 1, 0), rtol=1e-12)

    def test_strided_padded_multichannel(self, rng):
        x = rng.standard_normal((2, 3, 7, 6))
        k = rng.standard_normal((4, 3, 3, 2))
        b = rng.standard_normal(4)
        with precision(np.float64):
            y = ops.conv2d_forward(x, k, b, stride=2, padding=1)
        np.testing.assert_allclose(y.data, naive_conv2d(x, k, b, 2, 1), rtol=1e-12)

    def test_bad_geometry(self):
        with pytest.raises(GeometryError):
            ops.conv2d_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))


class TestConvTranspose:
    def test_scaling_identity(self, rng):
        x = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
        y = ops.conv2d_transpose_forward(x, np.full((1, 1, 1, 1), 2.5), np.zeros(1))
        np.testing.assert_allclose(y.data, 2.5 * x, rtol=1e-6)

    def test_matches_scatter_oracle(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        k = rng.standard_normal((3, 2, 4, 4))
        b = rng.standard_normal(2)
        with precision(np.float64):
            y = ops.conv2d_transpose_forward(x, k, b, stride=2, padding=1)
        assert y.shape == (2, 2, 8, 10)
        np.testing.assert_allclose(y.data, naive_conv2d_transpose(x, k, b, 2, 1), rtol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2), st.integers(1, 10), st.integers(1, 10),
           st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_adjoint_identity(self, k, s, p, h, w, c_in, c_out, seed):
        if h + 2 * p < k or w + 2 * p < k:
            return
        rng = np.random.default_rng(seed)
        geom = ConvGeometry(k, s, p)
        ho, wo = geom.conv_out(h, w)
        # conv maps (h, w) -> (ho, wo); transposed conv must map back exactly
        try:
            if geom.transpose_out(ho, wo) != (h, w):
                return
        except GeometryError:
            return
        x = rng.standard_normal((2, c_in, h, w))
        y = rng.standard_normal((2, c_out, ho, wo))
        kern = rng.standard_normal((c_out, c_in, k, k))
        with precision(np.float64):
            lhs = np.sum(ops.conv2d_forward(x, kern, np.zeros(c_out), geom).data * y)
            rhs = np.sum(x * ops.conv2d_transpose_forward(y, kern, np.zeros(c_in), geom).data)
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))

    def test_adjoint_identity_float32(self, rng):
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        y = rng.standard_normal((2, 4, 4, 4)).astype(np.float32)
        kern = rng.standard_normal((4, 3, 4, 4)).astype(np.float32)
        lhs = float(np.sum(ops.conv2d_forward(x, kern, np.zeros(4, np.float32), stride=2, padding=1).data * y))
        rhs = float(np.sum(x * ops.conv2d_transpose_forward(y, kern, np.zeros(3, np.float32), stride=2,
                                                            padding=1).data))
        assert abs(lhs - rhs) <= 1e-4 * abs(lhs)


class TestActivations:
    @pytest.mark.parametrize("x, expected", [(2.0, 2.0), (-1.0, -0.2), (0.0, 0.0)])
    def test_leaky_relu(self, x, expected):
        assert ops.leaky_relu(np.array([x]), 0.2).data[0] == pytest.approx(expected)

    @given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=20))
    def test_leaky_relu_identity_on_nonnegatives(self, xs):
        x = np.array(xs, dtype=np.float32)
        np.testing.assert_array_equal(ops.leaky_relu(x, 0.2).data, x)

    def test_sigmoid_anchors(self):
        assert ops.sigmoid(np.array([0.0])).data[0] == 0.5
        with precision(np.float64):
            assert ops.sigmoid(np.array([math.log(3)])).data[0] == pytest.approx(0.75, abs=1e-12)

    def test_sigmoid_symmetry(self, rng):
        x = rng.standard_normal(1000).astype(np.float32) * 5
        np.testing.assert_allclose(ops.sigmoid(-x).data, 1 - ops.sigmoid(x).data, atol=1e-6)

    @given(st.floats(-15, 15))
    def test_sigmoid_open_interval(self, v):
        y = ops.sigmoid(np.array([v], dtype=np.float32)).data[0]
        assert 0.0 < y < 1.0

    def test_sigmoid_extreme_inputs_stay_finite(self):
        with np.errstate(over="raise"):
            y = ops.sigmoid(np.array([-1000.0, -100.0, 100.0, 1000.0], dtype=np.float32)).data
        assert np.all(np.isfinite(y)) and np.all((y >= 0) & (y <= 1))

    def test_sigmoid_grad_at_zero(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        backward(ops.sum(ops.sigmoid(x)))
        assert x.grad[0] == pytest.approx(0.25)

    def test_leaky_relu_grad(self):
        x = Tensor(np.array([-3.0]), requires_grad=True)
        backward(ops.sum(ops.leaky_relu(x, 0.2)))
        assert x.grad[0] == pytest.approx(0.2)


class TestBatchNorm:
    def test_constant_batch_gives_zero(self):
        x = np.full((4, 2, 3, 3), 7.0, dtype=np.float32)
        y = ops.batchnorm_forward(x, np.ones(2), np.zeros(2), "train")
        np.testing.assert_array_equal(y.data, 0)

    def test_already_standardised(self):
        x = np.array([-1.0, 1.0], dtype=np.float32).reshape(2, 1, 1, 1)
        y = ops.batchnorm_forward(x, np.ones(1), np.zeros(1), "train")
        np.testing.assert_allclose(y.data.ravel(), [-1, 1], atol=1e-5)

    def test_random_batch_statistics(self, rng):
        x = (rng.standard_normal((8, 3, 6, 6)) * 4 + 2).astype(np.float32)
        y = ops.batchnorm_forward(x, np.ones(3), np.zeros(3), "train").data.astype(np.float64)
        assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-5
        assert np.abs(y.var(axis=(0, 2, 3)) - 1).max() < 1e-3

    def test_batch_of_one_rejected(self):
        with pytest.raises(ShapeError):
            ops.batchnorm_forward(np.zeros((1, 2, 2, 2)), np.ones(2), np.zeros(2), "train")

    def test_running_stats_and_infer(self, rng):
        state = ops.BatchNormState(2)
        x = (rng.standard_normal((4, 2, 3, 3)) + 3).astype(np.float32)
        ops.batchnorm_forward(x, np.ones(2), np.zeros(2), "train", state)
        mu = x.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(state.running_mean, 0.1 * mu, rtol=1e-6)
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), rtol=1e-6)
        y = ops.batchnorm_forward(x[:1], np.ones(2), np.zeros(2), "infer", state)
        expect = (x[:1] - state.running_mean[None, :, None, None]) / np.sqrt(
            state.running_var[None, :, None, None] + 1e-5)
        np.testing.assert_allclose(y.data, expect, rtol=1e-5)


class TestResampling:
    def test_upsample_pixel(self):
        y = ops.upsample_nearest(np.full((1, 1, 1, 1), 3.0), 2)
        np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2), 3.0))

    def test_upsample_blocks(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        y = ops.upsample_nearest(x, 2).data[0, 0]
        np.testing.assert_array_equal(y, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_downsample_constant(self):
        np.testing.assert_array_equal(ops.downsample_nearest(np.full((1, 1, 4, 4), 0.3), 2).data, np.float32(0.3))

    def test_downsample_index_mapping(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(ops.downsample_nearest(x, 2).data[0, 0], [[0, 2], [8, 10]])

    def test_downsample_alternating_columns(self):
        x = np.tile(np.array([1.0, 0.0, 1.0, 0.0]), (2, 1)).reshape(1, 1, 2, 4)
        np.testing.assert_array_equal(ops.downsample_nearest(x, 2).data[0, 0], [[1, 1]])

    def test_downsample_requires_divisible(self):
        with pytest.raises(ShapeError):
            ops.downsample_nearest(np.zeros((1, 1, 5, 4)), 2)

    @pytest.mark.parametrize("f", range(1, 9))
    def test_round_trip(self, f, rng):
        x = rng.random((2, 3, 5, 4)).astype(np.float32)
        np.testing.assert_array_equal(ops.downsample_nearest(ops.upsample_nearest(x, f), f).data, x)
