import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxmin_cnn import layers as L
from maxmin_cnn.errors import ConfigError, LayerStateError, ShapeError
from maxmin_cnn.train import grad_check_layer

rng = np.random.default_rng(7)


def conv_oracle(x, weights, bias, stride, pad):
    """Direct five-loop cross-correlation."""
    n, c, h, w = x.shape
    f, _, kh, kw = weights.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for oi in range(ho):
                for oj in range(wo):
                    acc = bias[fi]
                    for ci in range(c):
                        patch = xp[ni, ci, oi * stride:oi * stride + kh,
                                   oj * stride:oj * stride + kw]
                        acc += float((patch * weights[fi, ci]).sum())
                    out[ni, fi, oi, oj] = acc
    return out


def pool_oracle(x, window, stride):
    """Direct pooling with edge-clamped windows."""
    n, c, h, w = x.shape
    ho = -((h - window) // -stride) + 1
    wo = -((w - window) // -stride) + 1
    out = np.empty((n, c, ho, wo))
    for i in range(ho):
        for j in range(wo):
            he = min(i * stride + window, h)
            we = min(j * stride + window, w)
            out[:, :, i, j] = x[:, :, i * stride:he, j * stride:we].max(axis=(2, 3))
    return out


def make_conv(in_c, f, k, stride=1, pad=0, seed=0, scale=1.0):
    conv = L.Conv2D(in_c, f, k, stride=stride, pad=pad, rng=np.random.default_rng(seed))
    conv.weights[...] = np.random.default_rng(seed + 1).standard_normal(conv.weights.shape) * scale
    conv.bias[...] = np.random.default_rng(seed + 2).standard_normal(conv.bias.shape) * scale
    return conv


class TestConv2D:
    def test_identity_filter(self):
        conv = make_conv(1, 1, 1)
        conv.weights[...] = 1.0
        conv.bias[...] = 0.0
        x = rng.random((1, 1, 4, 4))
        np.testing.assert_array_equal(conv.forward(x), x)

    def test_window_sum(self):
        conv = make_conv(1, 1, 2)
        conv.weights[...] = 1.0
        conv.bias[...] = 0.0
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        np.testing.assert_array_equal(conv.forward(x), [[[[10.0]]]])

    def test_matches_direct_oracle(self):
        conv = make_conv(3, 4, 5, seed=3)
        x = rng.random((2, 3, 8, 8))
        out = conv.forward(x)
        ref = conv_oracle(x, conv.weights, conv.bias, 1, 0)
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    def test_strided_padded_oracle(self):
        conv = make_conv(2, 3, 3, stride=2, pad=1, seed=5)
        x = rng.random((2, 2, 7, 7))
        ref = conv_oracle(x, conv.weights, conv.bias, 2, 1)
        np.testing.assert_allclose(conv.forward(x), ref, rtol=1e-12)

    def test_zero_grad_out_gives_zero_grads(self):
        conv = make_conv(2, 3, 3, seed=9)
        out = conv.forward(rng.random((1, 2, 5, 5)))
        conv.zero_grads()
        conv.backward(np.zeros_like(out))
        assert not conv.w_grad.any() and not conv.b_grad.any()

    def test_identity_backprop(self):
        conv = make_conv(1, 1, 1)
        conv.weights[...] = 1.0
        conv.bias[...] = 0.0
        conv.forward(rng.random((1, 1, 3, 3)))
        g = np.zeros((1, 1, 3, 3))
        g[0, 0, 1, 2] = 1.0
        np.testing.assert_array_equal(conv.backward(g), g)

    def test_gradients_vs_finite_differences(self):
        conv = make_conv(2, 3, 3, stride=1, pad=1, seed=11, scale=0.5)
        x = rng.standard_normal((2, 2, 6, 6))
        report = grad_check_layer(conv, x, tolerance=1e-4)
        assert report.passed, str(report)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            make_conv(2, 3, 3).forward(np.zeros((1, 5, 6, 6)))

    def test_backward_before_forward(self):
        with pytest.raises(LayerStateError):
            make_conv(1, 1, 1).backward(np.zeros((1, 1, 2, 2)))

    def test_negation_symmetry(self):
        """conv(x, -W, -b) == -conv(x, W, b) exactly."""
        conv = make_conv(3, 4, 5, seed=13)
        x = rng.standard_normal((2, 3, 9, 9))
        pos = conv.forward(x)
        conv.weights[...] = -conv.weights
        conv.bias[...] = -conv.bias
        np.testing.assert_array_equal(conv.forward(x), -pos)


class TestMaxMin:
    def test_definition(self):
        x = np.array([1.0, -2.0, 3.0]).reshape(1, 3, 1, 1)
        out = L.MaxMin().forward(x)
        np.testing.assert_array_equal(out.reshape(-1), [1, -2, 3, -1, 2, -3])

    def test_zero_input(self):
        out = L.MaxMin().forward(np.zeros((2, 3, 4, 4)))
        assert out.shape == (2, 6, 4, 4)
        assert not out.any()

    def test_halves_exact(self):
        x = rng.standard_normal((3, 5, 4, 4))
        out = L.MaxMin().forward(x)
        np.testing.assert_array_equal(out[:, :5], x)
        np.testing.assert_array_equal(out[:, 5:], -x)

    def test_backward_cancellation(self):
        mm = L.MaxMin()
        mm.forward(rng.random((1, 2, 3, 3)))
        g = rng.random((1, 2, 3, 3))
        both = np.concatenate([g, g], axis=1)
        assert not mm.backward(both).any()

    def test_backward_pass_through(self):
        mm = L.MaxMin()
        mm.forward(rng.random((1, 2, 3, 3)))
        g = rng.random((1, 2, 3, 3))
        padded = np.concatenate([g, np.zeros_like(g)], axis=1)
        np.testing.assert_array_equal(mm.backward(padded), g)

    def test_backward_odd_channels(self):
        mm = L.MaxMin()
        mm.forward(rng.random((1, 2, 3, 3)))
        with pytest.raises(ShapeError):
            mm.backward(rng.random((1, 3, 3, 3)))

    def test_gradient_vs_finite_differences(self):
        x = rng.standard_normal((2, 3, 4, 4))
        report = grad_check_layer(L.MaxMin(), x, tolerance=1e-6)
        assert report.passed, str(report)


class TestReLU:
    def test_definition(self):
        out = L.ReLU().forward(np.array([-1.0, 2.0, 0.0]))
        np.testing.assert_array_equal(out, [0.0, 2.0, 0.0])

    def test_identity_region(self):
        x = rng.random((2, 2)) + 0.1
        np.testing.assert_array_equal(L.ReLU().forward(x), x)

    def test_gradient_off_kink(self):
        x = rng.standard_normal((3, 4, 5, 5))
        x[np.abs(x) < 1e-3] = 0.5  # keep inputs away from the kink
        report = grad_check_layer(L.ReLU(), x, tolerance=1e-6)
        assert report.passed, str(report)


class TestMaxPool:
    def test_constant_input_tie_rule(self):
        pool = L.MaxPool(window=2, stride=2)
        x = np.ones((1, 1, 4, 4))
        out = pool.forward(x)
        np.testing.assert_array_equal(out, np.ones((1, 1, 2, 2)))
        dx = pool.backward(np.ones_like(out))
        expected = np.zeros((1, 1, 4, 4))
        expected[0, 0, ::2, ::2] = 1.0  # first element of each window
        np.testing.assert_array_equal(dx, expected)

    def test_window_max(self):
        pool = L.MaxPool(window=2, stride=2)
        x = np.array([3.0, -5.0, 1.0, 0.0]).reshape(1, 1, 2, 2)
        assert pool.forward(x)[0, 0, 0, 0] == 3.0

    def test_matches_pool_oracle(self):
        pool = L.MaxPool(window=3, stride=2)
        x = rng.standard_normal((2, 3, 8, 8))
        np.testing.assert_array_equal(pool.forward(x), pool_oracle(x, 3, 2))

    def test_clamped_spatial_progression(self):
        pool = L.MaxPool(window=3, stride=2)
        for size, expect in ((32, 16), (16, 8), (8, 4)):
            out = pool.forward(rng.random((1, 1, size, size)))
            assert out.shape[2:] == (expect, expect)

    def test_window_larger_than_input(self):
        with pytest.raises(ConfigError):
            L.MaxPool(window=5, stride=2).forward(np.zeros((1, 1, 3, 3)))

    def test_gradient_vs_finite_differences(self):
        x = rng.standard_normal((2, 2, 6, 6)) * 10  # well-separated values
        report = grad_check_layer(L.MaxPool(window=3, stride=2), x, tolerance=1e-6)
        assert report.passed, str(report)


class TestLRN:
    def test_alpha_zero_is_rescale(self):
        x = rng.standard_normal((1, 4, 3, 3))
        lrn = L.LRN(depth_radius=2, k=2.0, alpha=0.0, beta=0.75)
        np.testing.assert_allclose(lrn.forward(x), x / 2.0 ** 0.75, rtol=1e-14)
        lrn_k1 = L.LRN(depth_radius=2, k=1.0, alpha=0.0, beta=0.75)
        np.testing.assert_array_equal(lrn_k1.forward(x), x)

    def test_hand_arithmetic(self):
        lrn = L.LRN(depth_radius=0, k=1.0, alpha=1.0, beta=0.5)
        x = np.array([3.0]).reshape(1, 1, 1, 1)
        np.testing.assert_allclose(lrn.forward(x)[0, 0, 0, 0], 3.0 / np.sqrt(10.0), rtol=1e-12)

    def test_boundary_clipping_matches_direct_sum(self):
        x = rng.standard_normal((2, 6, 3, 3))
        lrn = L.LRN(depth_radius=2, k=1.0, alpha=0.3, beta=0.75)
        out = lrn.forward(x)
        for c in range(6):
            lo, hi = max(0, c - 2), min(6, c + 3)
            denom = 1.0 + 0.3 * (x[:, lo:hi] ** 2).sum(axis=1)
            np.testing.assert_allclose(out[:, c], x[:, c] * denom ** -0.75, rtol=1e-12)

    def test_groups_normalize_independently(self):
        x = rng.standard_normal((1, 8, 2, 2))
        grouped = L.LRN(groups=2).forward(x)
        single = L.LRN(groups=1)
        np.testing.assert_array_equal(grouped[:, :4], single.forward(x[:, :4]))
        np.testing.assert_array_equal(grouped[:, 4:], single.forward(x[:, 4:]))

    def test_gradient_vs_finite_differences(self):
        x = rng.standard_normal((2, 6, 4, 4))
        lrn = L.LRN(depth_radius=2, k=1.0, alpha=0.5, beta=0.75)
        report = grad_check_layer(lrn, x, tolerance=1e-4)
        assert report.passed, str(report)

    def test_grouped_gradient(self):
        x = rng.standard_normal((2, 8, 3, 3))
        report = grad_check_layer(L.LRN(alpha=0.5, groups=2), x, tolerance=1e-4)
        assert report.passed, str(report)

    def test_nonpositive_k(self):
        with pytest.raises(ConfigError):
            L.LRN(k=0.0)


class TestDense:
    def test_identity(self):
        d = L.Dense(4, 4)
        d.weights[...] = np.eye(4)
        d.bias[...] = 0.0
        x = rng.random((3, 4))
        np.testing.assert_array_equal(d.forward(x), x)

    def test_constant(self):
        d = L.Dense(4, 2)
        d.weights[...] = 0.0
        d.bias[...] = 7.0
        out = d.forward(rng.random((3, 4)))
        np.testing.assert_array_equal(out, np.full((3, 2), 7.0))

    def test_gradient_vs_finite_differences(self):
        d = L.Dense(6, 4)
        d.weights[...] = np.random.default_rng(3).standard_normal((4, 6))
        report = grad_check_layer(d, rng.standard_normal((5, 6)), tolerance=1e-6)
        assert report.passed, str(report)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            L.Dense(6, 4).forward(np.zeros((2, 5)))


class TestDropout:
    def test_p_zero_identity(self):
        x = rng.random((4, 4))
        drop = L.Dropout(0.0)
        np.testing.assert_array_equal(drop.forward(x, train=True), x)
        np.testing.assert_array_equal(drop.forward(x, train=False), x)

    def test_eval_identity(self):
        x = rng.random((4, 4))
        np.testing.assert_array_equal(L.Dropout(0.7).forward(x, train=False), x)

    def test_empirical_zero_fraction(self):
        drop = L.Dropout(0.3, rng=np.random.default_rng(0))
        x = np.ones((1000, 1000))
        out = drop.forward(x, train=True)
        frac = float((out == 0).mean())
        assert abs(frac - 0.3) < 0.005
        survivors = out[out != 0]
        np.testing.assert_allclose(survivors, 1.0 / 0.7, rtol=1e-12)

    def test_backward_uses_same_mask(self):
        drop = L.Dropout(0.5, rng=np.random.default_rng(1))
        x = rng.random((10, 10))
        out = drop.forward(x, train=True)
        g = drop.backward(np.ones_like(x))
        np.testing.assert_array_equal((out == 0), (g == 0))

    def test_p_out_of_range(self):
        for p in (-0.1, 1.0, 1.5):
            with pytest.raises(ConfigError):
                L.Dropout(p)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        sm = L.SoftmaxCrossEntropy()
        loss, probs = sm.forward(np.zeros((4, 10)), np.array([0, 3, 5, 9]))
        np.testing.assert_allclose(loss, np.log(10.0), rtol=1e-12)
        np.testing.assert_allclose(probs, 0.1, rtol=1e-12)

    def test_saturation(self):
        sm = L.SoftmaxCrossEntropy()
        loss, _ = sm.forward(np.array([[100.0, 0.0]]), np.array([0]))
        assert loss < 1e-10

    def test_rows_sum_to_one(self):
        sm = L.SoftmaxCrossEntropy()
        logits = rng.standard_normal((8, 10)) * 5
        _, probs = sm.forward(logits, rng.integers(0, 10, 8))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_gradient_vs_finite_differences(self):
        sm = L.SoftmaxCrossEntropy()
        logits = rng.standard_normal((4, 6))
        labels = rng.integers(0, 6, 4)
        _, _ = sm.forward(logits, labels)
        analytic = sm.backward()
        step = 1e-6
        for i in range(4):
            for j in range(6):
                pert = logits.copy()
                pert[i, j] += step
                lp, _ = sm.forward(pert, labels)
                pert[i, j] -= 2 * step
                lm, _ = sm.forward(pert, labels)
                numeric = (lp - lm) / (2 * step)
                assert abs(analytic[i, j] - numeric) <= 1e-6 * max(1.0, abs(numeric))

    def test_label_out_of_range(self):
        with pytest.raises(ShapeError):
            L.SoftmaxCrossEntropy().forward(np.zeros((1, 3)), np.array([3]))


# -- algebraic invariants from the MaxMin construction ----------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_maxmin_relu_sparsity(seed):
    """The two post-ReLU halves have elementwise product exactly zero."""
    x = np.random.default_rng(seed).standard_normal((1, 3, 4, 4))
    out = L.ReLU().forward(L.MaxMin().forward(x))
    assert not (out[:, :3] * out[:, 3:]).any()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relu_maxpool_commute(seed):
    x = np.random.default_rng(seed).standard_normal((2, 2, 6, 6))
    a = L.MaxPool(3, 2).forward(L.ReLU().forward(x))
    b = L.ReLU().forward(L.MaxPool(3, 2).forward(x))
    np.testing.assert_array_equal(a, b)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bidirectional_pooling_identity(seed):
    """(max relu X, max relu -X) == (relu max X, relu -min X) per window."""
    x = np.random.default_rng(seed).standard_normal(9)
    lhs = (np.maximum(x, 0).max(), np.maximum(-x, 0).max())
    rhs = (max(x.max(), 0.0), max(-x.min(), 0.0))
    assert lhs == rhs
