import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwcnn.layers import (
    ConvLayerParams,
    conv2d_backward,
    conv2d_forward,
    fc_backward,
    fc_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax_probs,
    softmax_xent,
)
from bwcnn.network import canonical_network

from helpers import central_diff, max_rel_err


def ones_3x3_setup():
    x = np.ones((1, 1, 3, 3))
    p = ConvLayerParams(np.ones((1, 1, 3, 3)), np.zeros(1))
    return x, p


class TestConvForward:
    def test_all_ones_window_sums_to_nine(self):
        x, p = ones_3x3_setup()
        out = conv2d_forward(x, p)
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 9.0

    def test_zero_kernel_yields_constant_bias(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 7, 9))
        p = ConvLayerParams(np.zeros((4, 3, 3, 3)), np.full(4, 2.5))
        out = conv2d_forward(x, p)
        assert np.array_equal(out, np.full((2, 4, 5, 7), 2.5))

    def test_canonical_chain_spatial_sizes(self):
        spec = canonical_network()
        chain = spec.shape_chain()
        conv_and_pool = [
            (c, h) for (kind, (c, h, w)) in zip((l.kind for l in spec.layers), chain)
            if kind in ("conv", "maxpool")
        ]
        spatial = [h for _, h in conv_and_pool]
        assert spatial == [116, 58, 56, 28, 24, 12, 8, 4]
        # conv stack hands 32*4*4 = 512 values to the first FC layer
        assert conv_and_pool[-1] == (32, 4)

    def test_channel_mismatch_names_both_shapes(self):
        x = np.zeros((1, 2, 5, 5))
        p = ConvLayerParams(np.zeros((1, 3, 3, 3)), np.zeros(1))
        with pytest.raises(ValueError, match=r"\(1, 2, 5, 5\).*\(1, 3, 3, 3\)"):
            conv2d_forward(x, p)

    def test_kernel_larger_than_input_rejected(self):
        x = np.zeros((1, 1, 2, 2))
        p = ConvLayerParams(np.zeros((1, 1, 3, 3)), np.zeros(1))
        with pytest.raises(ValueError, match="does not fit"):
            conv2d_forward(x, p)

    def test_stride_two(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        p = ConvLayerParams(np.ones((1, 1, 2, 2)), np.zeros(1), stride=2)
        out = conv2d_forward(x, p)
        assert np.array_equal(out[0, 0], [[0 + 1 + 4 + 5, 2 + 3 + 6 + 7], [8 + 9 + 12 + 13, 10 + 11 + 14 + 15]])

    def test_linearity_in_input_with_zero_bias(self):
        rng = np.random.default_rng(3)
        p = ConvLayerParams(rng.normal(size=(2, 2, 3, 3)), np.zeros(2))
        x = rng.normal(size=(1, 2, 6, 6))
        y = rng.normal(size=(1, 2, 6, 6))
        a, b = 1.7, -0.3
        lhs = conv2d_forward(a * x + b * y, p)
        rhs = a * conv2d_forward(x, p) + b * conv2d_forward(y, p)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


class TestConvBackward:
    def test_ones_example_gradients(self):
        x, p = ones_3x3_setup()
        gx, gw, gb = conv2d_backward(x, p, np.ones((1, 1, 1, 1)))
        assert np.array_equal(gw, np.ones((1, 1, 3, 3)))
        assert np.array_equal(gb, [1.0])
        assert np.array_equal(gx, np.ones((1, 1, 3, 3)))

    def test_zero_grad_out_gives_zero_gradients(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 2, 5, 5))
        p = ConvLayerParams(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
        gx, gw, gb = conv2d_backward(x, p, np.zeros((2, 3, 3, 3)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_grad_shape_mismatch_rejected(self):
        x = np.zeros((1, 1, 5, 5))
        p = ConvLayerParams(np.zeros((1, 1, 3, 3)), np.zeros(1))
        with pytest.raises(ValueError, match="does not match"):
            conv2d_backward(x, p, np.zeros((1, 1, 2, 2)))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(2, 2, 3, 3))
        b = rng.normal(size=2)
        r = rng.normal(size=(1, 2, 3, 3))  # fixed weighting makes the loss scalar

        def loss_wrt(part):
            def f(v):
                ww, bb, xx = w, b, x
                if part == "w":
                    ww = v
                elif part == "b":
                    bb = v
                else:
                    xx = v
                return float((conv2d_forward(xx, ConvLayerParams(ww, bb)) * r).sum())

            return f

        gx, gw, gb = conv2d_backward(x, ConvLayerParams(w, b), r)
        assert max_rel_err(gw, central_diff(loss_wrt("w"), w)) < 1e-4
        assert max_rel_err(gb, central_diff(loss_wrt("b"), b)) < 1e-4
        assert max_rel_err(gx, central_diff(loss_wrt("x"), x)) < 1e-4

    def test_strided_backward_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(1, 1, 6, 6))
        w = rng.normal(size=(2, 1, 2, 2))
        b = rng.normal(size=2)
        r = rng.normal(size=(1, 2, 3, 3))
        p = ConvLayerParams(w, b, stride=2)
        gx, gw, gb = conv2d_backward(x, p, r)

        def f(v):
            return float((conv2d_forward(v, p) * r).sum())

        assert max_rel_err(gx, central_diff(f, x)) < 1e-4


class TestMaxPool:
    def test_window_max_and_argmax(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        out, idx = maxpool_forward(x)
        assert out[0, 0, 0, 0] == 4.0
        assert idx.argmax[0, 0, 0, 0] == 3  # position (1, 1) in scan order

    def test_tie_breaks_to_first_scan_position(self):
        x = np.full((1, 1, 2, 2), 5.0)
        out, idx = maxpool_forward(x)
        assert out[0, 0, 0, 0] == 5.0
        assert idx.argmax[0, 0, 0, 0] == 0

    def test_four_by_four_enumeration(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out, _ = maxpool_forward(x)
        assert np.array_equal(out[0, 0], [[5, 7], [13, 15]])

    def test_odd_spatial_rejected(self):
        with pytest.raises(ValueError, match="not divisible"):
            maxpool_forward(np.zeros((1, 1, 5, 4)))

    def test_backward_routes_to_argmax(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        _, idx = maxpool_forward(x)
        gx = maxpool_backward(idx, np.ones((1, 1, 1, 1)))
        assert np.array_equal(gx[0, 0], [[0, 0], [0, 1]])

    def test_backward_zeros(self):
        _, idx = maxpool_forward(np.random.default_rng(0).normal(size=(1, 2, 4, 4)))
        assert not maxpool_backward(idx, np.zeros((1, 2, 2, 2))).any()

    def test_backward_shape_mismatch_rejected(self):
        _, idx = maxpool_forward(np.zeros((1, 1, 4, 4)))
        with pytest.raises(ValueError, match="does not match"):
            maxpool_backward(idx, np.zeros((1, 1, 3, 3)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_backward_conserves_gradient_mass(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 6, 8))
        _, idx = maxpool_forward(x)
        # integer-valued gradients make the conservation check exact
        g = rng.integers(-50, 50, size=(2, 3, 3, 4)).astype(np.float64)
        gx = maxpool_backward(idx, g)
        assert gx.sum() == g.sum()
        gf = rng.normal(size=(2, 3, 3, 4))
        assert abs(maxpool_backward(idx, gf).sum() - gf.sum()) < 1e-12


class TestRelu:
    def test_examples(self):
        x = np.array([-1.0, 0.0, 2.0]).reshape(1, 3, 1, 1)
        assert np.array_equal(relu_forward(x).ravel(), [0, 0, 2])
        pos = np.abs(np.random.default_rng(0).normal(size=(1, 2, 3, 3))) + 0.1
        assert np.array_equal(relu_forward(pos), pos)

    def test_gradient_matches_finite_differences_away_from_kink(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 2, 4, 4))
        x[np.abs(x) < 1e-3] = 0.5
        r = rng.normal(size=x.shape)
        g = relu_backward(x, r)
        fd = central_diff(lambda v: float((relu_forward(v) * r).sum()), x)
        assert max_rel_err(g, fd) < 1e-4


class TestFC:
    def test_ip1_ip2_shapes(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 32, 4, 4))  # 512 values per sample
        ip1 = ConvLayerParams(rng.normal(size=(128, 32, 4, 4)), np.zeros(128))
        h = fc_forward(x, ip1)
        assert h.shape == (3, 128, 1, 1)
        ip2 = ConvLayerParams(rng.normal(size=(2, 128, 1, 1)), np.zeros(2))
        assert fc_forward(h, ip2).shape == (3, 2, 1, 1)

    def test_identity_kernel_permutes_inputs(self):
        x = np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2)
        w = np.zeros((4, 1, 2, 2))
        perm = [2, 0, 3, 1]
        for feat, src in enumerate(perm):
            w[feat, 0, src // 2, src % 2] = 1.0
        out = fc_forward(x, ConvLayerParams(w, np.zeros(4)))
        assert np.array_equal(out.ravel(), [2, 0, 3, 1])

    def test_matches_flattened_matvec(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 3, 4, 4))
        w = rng.normal(size=(5, 3, 4, 4))
        b = rng.normal(size=5)
        out = fc_forward(x, ConvLayerParams(w, b))
        ref = x.reshape(2, -1) @ w.reshape(5, -1).T + b
        assert max_rel_err(out.reshape(2, 5), ref) < 1e-6

    def test_spatial_mismatch_rejected(self):
        x = np.zeros((1, 1, 3, 3))
        p = ConvLayerParams(np.zeros((2, 1, 2, 2)), np.zeros(2))
        with pytest.raises(ValueError, match="must equal input spatial size"):
            fc_forward(x, p)
        with pytest.raises(ValueError, match="must equal input spatial size"):
            fc_backward(x, p, np.zeros((1, 2, 1, 1)))


class TestSoftmaxXent:
    def test_symmetric_logits(self):
        loss, grad = softmax_xent(np.array([[0.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(np.log(2), rel=1e-12)
        np.testing.assert_allclose(grad, [[-0.5, 0.5]], atol=1e-12)

    def test_extreme_logit_is_stable(self):
        loss, grad = softmax_xent(np.array([[1000.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(grad).all()

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(4)
        p = softmax_probs(rng.normal(scale=30, size=(50, 2)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert (p >= 0).all()

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(8)
        loss, _ = softmax_xent(rng.normal(size=(10, 2)), rng.integers(0, 2, 10))
        assert loss >= 0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(3, 2))
        labels = np.array([0, 1, 0])
        _, grad = softmax_xent(z, labels)
        fd = central_diff(lambda v: softmax_xent(v, labels)[0], z)
        assert max_rel_err(grad, fd) < 1e-6

    def test_non_finite_logits_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            softmax_xent(np.array([[np.inf, 0.0]]), np.array([0]))

    def test_four_d_logits_accepted(self):
        loss, grad = softmax_xent(np.zeros((1, 2, 1, 1)), np.array([1]))
        assert loss == pytest.approx(np.log(2))
        assert grad.shape == (1, 2, 1, 1)
