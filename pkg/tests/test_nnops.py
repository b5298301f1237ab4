"""Operator-level tests: worked examples, adjoint identities, gradient checks."""

import numpy as np
import pytest

from msfsep import nnops as N
from msfsep.errors import ConfigError, DimensionError, UsageError


def t64(data, requires_grad=False):
    return N.Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def rand64(rng, *shape, requires_grad=False):
    return N.Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


def check_grads(loss_fn, tensors, tol=1e-6, step=1e-5):
    """Analytic grads of loss_fn() vs central finite differences, per tensor."""
    loss = loss_fn()
    for t in tensors:
        t.grad = None
    N.backward(loss)
    for t in tensors:
        fd = N.fd_gradient(lambda: loss_fn().item(), t.data, step=step)
        assert t.grad is not None
        err = N.rel_error(t.grad, fd)
        assert err < tol, f"gradient mismatch: rel err {err:.3e}"


class TestConv1d:
    def test_moving_sum(self):
        x = t64([[1, 2, 3, 4]])
        w = t64([[[1, 1]]])
        b = t64([0.0])
        y = N.conv1d(x, w, b, stride=1)
        np.testing.assert_array_equal(y.data, [[3, 5, 7]])

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rand64(rng, 3, 8)
        w = N.Tensor(np.eye(3, dtype=np.float64)[:, :, None])
        y = N.conv1d(x, w)
        np.testing.assert_array_equal(y.data, x.data)

    def test_output_length(self):
        rng = np.random.default_rng(1)
        x = rand64(rng, 2, 17)
        w = rand64(rng, 4, 2, 5)
        assert N.conv1d(x, w, stride=3, padding=2).shape == (4, (17 + 4 - 5) // 3 + 1)

    def test_grouped_gradcheck(self):
        rng = np.random.default_rng(2)
        x = rand64(rng, 3, 16, requires_grad=True)
        w = rand64(rng, 3, 1, 5, requires_grad=True)
        b = rand64(rng, 3, requires_grad=True)
        probe = rng.standard_normal((3, 6))

        def loss():
            y = N.conv1d(x, w, b, stride=2, groups=3)
            return N.sum_all(N.mul(y, N.Tensor(probe)))

        check_grads(loss, [x, w, b], tol=1e-6)

    def test_strided_padded_gradcheck(self):
        rng = np.random.default_rng(3)
        x = rand64(rng, 4, 12, requires_grad=True)
        w = rand64(rng, 6, 2, 3, requires_grad=True)
        probe = rng.standard_normal((6, 6))

        def loss():
            y = N.conv1d(x, w, stride=2, groups=2, padding=1)
            return N.sum_all(N.mul(y, N.Tensor(probe)))

        check_grads(loss, [x, w], tol=1e-6)

    def test_bad_groups(self):
        rng = np.random.default_rng(4)
        x = rand64(rng, 3, 8)
        w = rand64(rng, 4, 1, 3)
        with pytest.raises(DimensionError, match="channel"):
            N.conv1d(x, w, groups=2)

    def test_kernel_longer_than_input(self):
        x = t64([[1.0, 2.0]])
        w = t64(np.ones((1, 1, 5)))
        with pytest.raises(DimensionError, match="frame"):
            N.conv1d(x, w)


class TestTransposedConv1d:
    def test_impulse_spreads_kernel(self):
        x = t64([[1.0]])
        w = t64(np.ones((1, 1, 3)))
        y = N.transposed_conv1d(x, w, stride=1)
        np.testing.assert_array_equal(y.data, [[1, 1, 1]])

    def test_direct_placement(self):
        x = t64([[1.0, 1.0]])
        w = t64([[[1.0, 0.0]]])
        y = N.transposed_conv1d(x, w, stride=2)
        np.testing.assert_array_equal(y.data, [[1, 0, 1, 0]])

    def test_adjoint_identity(self):
        # tconv side holds 2x7 frames at k=21, stride=10; conv side covers (7-1)*10+21 samples
        rng = np.random.default_rng(5)
        w = rand64(rng, 2, 3, 21)  # conv reads (Cout=2, Cin=3, k); tconv reads (Cin=2, Cout=3, k)
        x = rand64(rng, 3, 81)
        y = rand64(rng, 2, 7)
        fwd = N.conv1d(x, N.Tensor(w.data), stride=10)
        assert fwd.shape == (2, 7)
        back = N.transposed_conv1d(y, w, stride=10)
        assert back.shape == (3, 81)
        lhs = float((fwd.data * y.data).sum())
        rhs = float((x.data * back.data).sum())
        assert abs(lhs - rhs) < 1e-10

    def test_gradcheck(self):
        rng = np.random.default_rng(6)
        x = rand64(rng, 2, 7, requires_grad=True)
        w = rand64(rng, 2, 3, 4, requires_grad=True)
        b = rand64(rng, 3, requires_grad=True)
        probe = rng.standard_normal((3, (7 - 1) * 3 + 4))

        def loss():
            y = N.transposed_conv1d(x, w, b, stride=3)
            return N.sum_all(N.mul(y, N.Tensor(probe)))

        check_grads(loss, [x, w, b], tol=1e-6)

    def test_out_length_validation(self):
        x = t64(np.ones((1, 4)))
        w = t64(np.ones((1, 1, 3)))
        with pytest.raises(DimensionError, match="length"):
            N.transposed_conv1d(x, w, stride=2, out_length=20)


class TestDepthwiseSeparable:
    def test_param_count_formula(self):
        assert N.dw_sep_param_count(512, 5, 512) == 512 * 5 + 512 + 512 * 512 + 512

    def test_delta_then_identity(self):
        rng = np.random.default_rng(7)
        x = rand64(rng, 3, 10)
        dw = np.zeros((3, 1, 5))
        dw[:, 0, 2] = 1.0  # centered delta
        pw = np.eye(3)[:, :, None]
        y = N.depthwise_separable_conv(
            x, t64(dw), t64(np.zeros(3)), t64(pw), t64(np.zeros(3)), stride=1, padding=2
        )
        np.testing.assert_allclose(y.data, x.data, atol=1e-15)

    def test_composition_equals_two_step(self):
        rng = np.random.default_rng(8)
        x = rand64(rng, 4, 12)
        dw_w = rand64(rng, 4, 1, 5)
        dw_b = rand64(rng, 4)
        pw_w = rand64(rng, 6, 4, 1)
        pw_b = rand64(rng, 6)
        y = N.depthwise_separable_conv(x, dw_w, dw_b, pw_w, pw_b, stride=2, padding=2)
        mid = N.conv1d(x, dw_w, dw_b, stride=2, groups=4, padding=2)
        ref = N.conv1d(mid, pw_w, pw_b)
        np.testing.assert_array_equal(y.data, ref.data)


class TestResampling:
    def test_interpolate_replicates(self):
        y = N.interpolate(t64([[1.0, 2.0]]), 2)
        np.testing.assert_array_equal(y.data, [[1, 1, 2, 2]])

    def test_interpolate_identity(self):
        x = t64([[3.0, 4.0]])
        assert N.interpolate(x, 1) is x

    def test_interpolate_bad_factor(self):
        with pytest.raises(ConfigError, match="factor"):
            N.interpolate(t64([[1.0]]), 3)

    def test_interpolate_gradcheck(self):
        rng = np.random.default_rng(9)
        x = rand64(rng, 2, 6, requires_grad=True)
        probe = rng.standard_normal((2, 24))

        def loss():
            return N.sum_all(N.mul(N.interpolate(x, 4), N.Tensor(probe)))

        check_grads(loss, [x], tol=1e-6)

    def test_pixel_shuffle_index_formula(self):
        y = N.pixel_shuffle_1d(t64([[1.0, 2.0], [3.0, 4.0]]), 2)
        np.testing.assert_array_equal(y.data, [[1, 3, 2, 4]])

    def test_pixel_shuffle_roundtrip(self):
        rng = np.random.default_rng(10)
        x = rand64(rng, 8, 5)
        back = N.pixel_unshuffle_1d(N.pixel_shuffle_1d(x, 4), 4)
        np.testing.assert_array_equal(back.data, x.data)

    def test_pixel_shuffle_indivisible(self):
        with pytest.raises(DimensionError, match="divisible"):
            N.pixel_shuffle_1d(t64(np.ones((3, 4))), 2)

    def test_pixel_shuffle_gradcheck(self):
        rng = np.random.default_rng(11)
        x = rand64(rng, 4, 5, requires_grad=True)
        probe = rng.standard_normal((2, 10))

        def loss():
            return N.sum_all(N.mul(N.pixel_shuffle_1d(x, 2), N.Tensor(probe)))

        check_grads(loss, [x], tol=1e-6)


class TestActivations:
    def test_relu_value(self):
        assert N.relu(t64([[-1.0]])).data[0, 0] == 0.0

    def test_prelu_value(self):
        y = N.prelu(t64([[-2.0]]), t64(0.25))
        assert y.data[0, 0] == -0.5

    def test_gradcheck_away_from_zero(self):
        rng = np.random.default_rng(12)
        x = N.Tensor(rng.standard_normal((3, 7)) + 0.1 * np.sign(rng.standard_normal((3, 7))), requires_grad=True)
        x.data[np.abs(x.data) < 0.05] = 0.5
        a = N.Tensor(np.full((3, 1), 0.3), requires_grad=True)
        probe = rng.standard_normal((3, 7))

        def loss():
            return N.sum_all(N.mul(N.prelu(x, a), N.Tensor(probe)))

        check_grads(loss, [x, a], tol=1e-6)


class TestGlobalLayerNorm:
    def test_constant_input_zeroes(self):
        x = t64(np.full((3, 4), 2.5))
        y = N.global_layer_norm(x, t64(np.ones((3, 1))), t64(np.zeros((3, 1))))
        np.testing.assert_allclose(y.data, 0.0, atol=1e-3)

    def test_normalized_statistics(self):
        rng = np.random.default_rng(13)
        x = rand64(rng, 4, 8)
        y = N.global_layer_norm(x, t64(np.ones((4, 1))), t64(np.zeros((4, 1))))
        assert abs(y.data.mean()) < 1e-6
        assert abs(y.data.var() - 1.0) < 1e-6

    def test_idempotent_on_normalized(self):
        rng = np.random.default_rng(14)
        x = rand64(rng, 4, 8)
        ones, zeros = t64(np.ones((4, 1))), t64(np.zeros((4, 1)))
        y = N.global_layer_norm(x, ones, zeros)
        z = N.global_layer_norm(y, ones, zeros)
        np.testing.assert_allclose(z.data, y.data, atol=1e-7)

    def test_gradcheck(self):
        rng = np.random.default_rng(15)
        x = rand64(rng, 3, 6, requires_grad=True)
        g = N.Tensor(rng.standard_normal((3, 1)), requires_grad=True)
        b = N.Tensor(rng.standard_normal((3, 1)), requires_grad=True)
        probe = rng.standard_normal((3, 6))

        def loss():
            return N.sum_all(N.mul(N.global_layer_norm(x, g, b), N.Tensor(probe)))

        check_grads(loss, [x, g, b], tol=1e-6)


class TestFusionPrimitives:
    def test_concat_shapes(self):
        a, b = t64(np.ones((2, 3))), t64(np.zeros((1, 3)))
        assert N.concat_channels([a, b]).shape == (3, 3)

    def test_concat_slice_roundtrip(self):
        rng = np.random.default_rng(16)
        a, b = rand64(rng, 2, 4), rand64(rng, 3, 4)
        cat = N.concat_channels([a, b])
        np.testing.assert_array_equal(N.slice_channels(cat, 0, 2).data, a.data)
        np.testing.assert_array_equal(N.slice_channels(cat, 2, 5).data, b.data)

    def test_concat_frame_mismatch_names_edge(self):
        a, b = t64(np.ones((2, 3))), t64(np.ones((2, 4)))
        with pytest.raises(DimensionError, match="stage2->stage1"):
            N.concat_channels([a, b], edge="stage2->stage1")

    def test_add_zero_identity(self):
        rng = np.random.default_rng(17)
        x = rand64(rng, 2, 5)
        y = N.add([x, t64(np.zeros((2, 5)))])
        np.testing.assert_array_equal(y.data, x.data)

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            N.add([t64(np.ones((2, 5))), t64(np.ones((2, 4)))])


class TestBackward:
    def test_single_conv_matches_fd(self):
        rng = np.random.default_rng(18)
        x = rand64(rng, 2, 10, requires_grad=True)
        w = rand64(rng, 3, 2, 3, requires_grad=True)
        probe = rng.standard_normal((3, 8))

        def loss():
            return N.sum_all(N.mul(N.conv1d(x, w), N.Tensor(probe)))

        check_grads(loss, [x, w], tol=1e-6)

    def test_zero_seed_zero_grads(self):
        rng = np.random.default_rng(19)
        x = rand64(rng, 2, 6, requires_grad=True)
        w = rand64(rng, 2, 2, 3, requires_grad=True)
        loss = N.sum_all(N.conv1d(x, w))
        grads = N.gradient_map(loss, {"w": w}, seed=0.0)
        np.testing.assert_array_equal(grads["w"], np.zeros_like(w.data))

    def test_unrecorded_tensor_raises(self):
        x = t64(np.ones((2, 4)), requires_grad=True)
        stray = t64(np.ones((2, 2)), requires_grad=True)
        loss = N.sum_all(x)
        with pytest.raises(UsageError, match="not recorded"):
            N.gradient_map(loss, {"stray": stray})

    def test_finite_forward(self):
        rng = np.random.default_rng(20)
        x = rand64(rng, 4, 16)
        w = rand64(rng, 4, 1, 5)
        pw = rand64(rng, 4, 4, 1)
        y = N.depthwise_separable_conv(x, w, None, pw, None, stride=2, padding=2)
        y = N.global_layer_norm(y, t64(np.ones((4, 1))), t64(np.zeros((4, 1))))
        y = N.prelu(y, t64(0.25))
        assert np.all(np.isfinite(y.data))
