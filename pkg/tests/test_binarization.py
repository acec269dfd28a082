import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwcnn.binarization import (
    BinarizedKernel,
    binarize_kernel,
    binarize_network,
    effective_weights,
    effective_weights_array,
    reconstruction_cost,
)
from bwcnn.network import canonical_network, init_params

from helpers import dyadic_uniform


def exhaustive_best_cost(w):
    """Brute force over every sign vector with its per-vector optimal scale."""
    w = np.asarray(w, dtype=np.float64)
    n = w.size
    best = np.inf
    for signs in itertools.product((1.0, -1.0), repeat=n):
        b = np.array(signs)
        alpha = float(w @ b) / n
        cost = float(((w - alpha * b) ** 2).sum())
        best = min(best, cost)
    return best


class TestBinarizeKernel:
    def test_already_binary_is_exact(self):
        k = binarize_kernel(np.array([1.0, -1.0, 1.0, 1.0]))
        assert k.alpha == 1.0
        assert np.array_equal(k.signs, [1, -1, 1, 1])
        assert reconstruction_cost(np.array([1.0, -1.0, 1.0, 1.0]), k) == 0.0

    def test_mixed_magnitudes(self):
        w = np.array([0.5, -1.5, 1.0, -1.0])
        k = binarize_kernel(w)
        assert k.alpha == 1.0
        assert np.array_equal(k.signs, [1, -1, 1, -1])
        # frozen from the exhaustive search over all 16 sign vectors
        assert exhaustive_best_cost(w) == pytest.approx(0.5)
        assert reconstruction_cost(w, k) == pytest.approx(0.5)

    def test_all_zero_vector(self):
        k = binarize_kernel(np.zeros(5))
        assert k.alpha == 0.0
        assert np.array_equal(k.signs, np.ones(5))

    def test_sign_zero_is_plus_one(self):
        k = binarize_kernel(np.array([0.0, -0.5]))
        assert k.signs[0] == 1.0

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            binarize_kernel(np.array([1.0, np.nan]))
        with pytest.raises(ValueError, match="empty"):
            binarize_kernel(np.zeros(0))

    def test_keeps_kernel_shape(self):
        w = np.random.default_rng(0).normal(size=(3, 5, 5))
        k = binarize_kernel(w)
        assert k.signs.shape == (3, 5, 5)
        assert k.n == 75

    @given(st.integers(0, 2**32 - 1), st.integers(1, 10))
    @settings(max_examples=40, deadline=None)
    def test_never_beaten_by_exhaustive_search(self, seed, n):
        w = np.random.default_rng(seed).normal(size=n)
        k = binarize_kernel(w)
        assert reconstruction_cost(w, k) <= exhaustive_best_cost(w) + 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_alpha_is_quadratic_minimum_for_fixed_signs(self, seed):
        # dJ/dalpha = 0 at alpha = mean|w| when B = sign(w)
        w = np.random.default_rng(seed).normal(size=8)
        k = binarize_kernel(w)
        for delta in (-1e-3, 1e-3):
            other = BinarizedKernel(max(k.alpha + delta, 0.0), k.signs)
            assert reconstruction_cost(w, other) >= reconstruction_cost(w, k) - 1e-15

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 2.0, 4.0, 0.25]))
    @settings(max_examples=30, deadline=None)
    def test_scale_equivariance_power_of_two(self, seed, c):
        w = np.random.default_rng(seed).normal(size=6)
        k = binarize_kernel(w)
        ks = binarize_kernel(c * w)
        assert ks.alpha == c * k.alpha
        assert np.array_equal(ks.signs, k.signs)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_sign_symmetry(self, seed):
        w = np.random.default_rng(seed).normal(size=6)
        w = w[np.abs(w) > 1e-12]  # sign(0) := +1 breaks the symmetry at zero
        k = binarize_kernel(w)
        kn = binarize_kernel(-w)
        assert kn.alpha == k.alpha
        assert np.array_equal(kn.signs, -k.signs)


class TestReconstructionCost:
    def test_half_unit_example(self):
        # independent evaluation: (0.5-1)^2 + (-1.5+1)^2 = 0.25 + 0.25
        k = BinarizedKernel(1.0, np.array([1.0, -1.0]))
        assert reconstruction_cost(np.array([0.5, -1.5]), k) == pytest.approx(0.5)

    def test_length_mismatch_rejected(self):
        k = BinarizedKernel(1.0, np.ones(3))
        with pytest.raises(ValueError, match="length mismatch"):
            reconstruction_cost(np.ones(4), k)


class TestEffectiveWeights:
    def test_examples(self):
        assert np.array_equal(
            effective_weights(BinarizedKernel(1.0, np.array([1.0, -1.0]))), [1, -1]
        )
        assert not effective_weights(BinarizedKernel(0.0, np.ones(4))).any()

    def test_binary_scaled_kernel_round_trips_exactly(self):
        rng = np.random.default_rng(11)
        for n in (3, 5, 27, 64):
            alpha = float(dyadic_uniform(rng, ()))
            signs = rng.choice([-1.0, 1.0], size=n)
            w = alpha * signs
            k = binarize_kernel(w)
            assert np.array_equal(effective_weights(k), w)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_effective_weights_is_a_fixed_point(self, seed):
        w = np.random.default_rng(seed).normal(size=12)
        first = effective_weights(binarize_kernel(w))
        second = effective_weights(binarize_kernel(first))
        np.testing.assert_allclose(second, first, rtol=1e-14, atol=0)

    def test_vectorized_layer_path_matches_per_kernel_math(self):
        rng = np.random.default_rng(13)
        w = rng.normal(size=(6, 3, 3, 3))
        fast = effective_weights_array(w)
        for k in range(6):
            assert np.array_equal(fast[k], effective_weights(binarize_kernel(w[k])))


class TestBinarizeNetwork:
    def test_canonical_kernel_count(self):
        params = init_params(canonical_network(), seed=0)
        net = binarize_network(params)
        assert sum(len(layer.kernels) for layer in net.layers) == 8 + 16 + 32 + 32 + 128 + 2

    def test_biases_pass_through_bitwise(self):
        params = init_params(canonical_network(), seed=1)
        for p in params.layers:
            p.biases[:] = np.random.default_rng(2).normal(size=p.biases.shape)
        net = binarize_network(params)
        for bl, pl in zip(net.layers, params.layers):
            assert np.array_equal(bl.biases, pl.biases)

    def test_binary_scaled_network_has_zero_cost(self):
        rng = np.random.default_rng(3)
        params = init_params(canonical_network(), seed=4)
        for p in params.layers:
            alphas = dyadic_uniform(rng, (p.out_features, 1, 1, 1))
            p.weights[:] = alphas * rng.choice([-1.0, 1.0], size=p.weights.shape)
        net = binarize_network(params)
        _, total = net.total_cost(params)
        assert total == 0.0
