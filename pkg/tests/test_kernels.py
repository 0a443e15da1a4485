# Tests for RBF / feature kernels and the median bandwidth heuristic
import numpy as np
import pytest

from core.exceptions import ContractError, DimensionError
from core.kernels import (
    BANDWIDTH_FLOOR,
    BandwidthPolicy,
    FeatureKernel,
    RbfKernel,
    median_bandwidth,
    pairwise_sq_dists,
)
from core.mlp import init_gaussian, layer_specs
from core.utils import central_difference, relative_error


class TestMedianBandwidth:

    def test_lower_median_of_pairwise_distances(self):
        """Even pair count takes the lower median."""
        # distances 1, 2, 4, 1, 3, 2 -> sorted 1 1 2 2 3 4 -> lower median 2
        pts = np.array([[0.0], [1.0], [2.0], [4.0]])
        assert median_bandwidth(pts, scale=0.5) == pytest.approx(1.0)

    def test_odd_count(self):
        """Odd pair count takes the middle distance."""
        pts = np.array([[0.0], [1.0], [3.0]])
        assert median_bandwidth(pts, scale=1.0) == pytest.approx(2.0)

    def test_identical_points_hit_floor(self):
        """Coincident points fall back to the bandwidth floor."""
        assert median_bandwidth(np.zeros((5, 2))) == BANDWIDTH_FLOOR

    def test_needs_two_points(self):
        """One point has no pairwise distance."""
        with pytest.raises(ContractError):
            median_bandwidth(np.zeros((1, 2)))

    def test_invariant_to_permutation_and_translation(self, rng):
        """Reordering or shifting the points leaves the bandwidth unchanged."""
        pts = rng.normal(size=(15, 3))
        h = median_bandwidth(pts, 0.5)
        assert median_bandwidth(pts[rng.permutation(15)], 0.5) == h
        assert median_bandwidth(pts + np.array([4.0, -2.5, 10.0]), 0.5) == pytest.approx(h, rel=1e-12)

    def test_embedded_points(self, rng):
        """Embedding first equals measuring the codes."""
        enc = init_gaussian(layer_specs(3, [], 2, out_activation="identity"), 1.0, rng)
        pts = rng.normal(size=(6, 3))
        codes = pts @ enc.layers[0].weight.T
        assert median_bandwidth(pts, 0.5, embed=enc) == pytest.approx(median_bandwidth(codes, 0.5))


class TestRbfKernel:

    def test_pairwise_sq_dists(self):
        """Squared distances for a small hand example."""
        a = np.array([[0.0, 0.0], [1.0, 1.0]])
        b = np.array([[1.0, 0.0]])
        np.testing.assert_allclose(pairwise_sq_dists(a, b), [[1.0], [1.0]])

    def test_self_similarity_is_one(self):
        """k(x, x) is exactly 1."""
        assert RbfKernel(0.3).eval([1.0, 2.0], [1.0, 2.0]) == 1.0

    def test_exponent_convention(self):
        """k = exp(-|x - x'|^2 / h^2)."""
        assert RbfKernel(2.0).eval([0.0], [1.0]) == pytest.approx(np.exp(-0.25))

    @pytest.mark.parametrize("h", [0.1, 1.0, 7.0])
    def test_gram_is_symmetric_psd(self, rng, h):
        """The Gram matrix of up to 20 points is symmetric and positive semidefinite."""
        pts = rng.normal(size=(20, 3))
        K = RbfKernel(h).gram(pts, pts)
        assert np.max(np.abs(K - K.T)) <= 1e-15
        assert np.linalg.eigvalsh(K).min() >= -1e-10

    def test_grad_is_antisymmetric(self, rng):
        """Swapping the arguments flips the sign of the gradient."""
        kernel = RbfKernel(0.6)
        for _ in range(20):
            x, x2 = rng.normal(size=4), rng.normal(size=4)
            np.testing.assert_allclose(kernel.grad_x(x, x2), -kernel.grad_x(x2, x), rtol=0.0, atol=1e-15)

    def test_bandwidth_must_be_positive(self):
        """Zero bandwidth is refused."""
        with pytest.raises(ContractError):
            RbfKernel(0.0)

    def test_argument_shapes_checked(self):
        """Arguments must share a dimension."""
        with pytest.raises(DimensionError):
            RbfKernel(1.0).eval([0.0, 1.0], [0.0])

    def test_grad_matches_finite_differences(self, rng):
        """Analytic kernel gradient against central differences."""
        kernel = RbfKernel(0.8)
        x, x2 = rng.normal(size=3), rng.normal(size=3)
        fd = central_difference(lambda z: kernel.eval(z, x2), x)
        np.testing.assert_allclose(kernel.grad_x(x, x2), fd, atol=1e-9)

    def test_cross_repulsion_matches_pointwise_sum(self, rng):
        """Summed repulsion equals the pointwise gradient sum."""
        kernel = RbfKernel(1.3)
        particles = rng.normal(size=(5, 2))
        queries = rng.normal(size=(3, 2))
        K, rep = kernel.cross(particles, queries)
        for q in range(3):
            expected = sum(kernel.grad_x(particles[j], queries[q]) for j in range(5))
            np.testing.assert_allclose(rep[q], expected, atol=1e-12)
            np.testing.assert_allclose(K[:, q], [kernel.eval(p, queries[q]) for p in particles])

    def test_refresh_policies(self, rng):
        """Fixed and median policies set the bandwidth."""
        pts = rng.normal(size=(10, 2))
        kernel = RbfKernel(1.0)
        assert kernel.refresh(pts, BandwidthPolicy("fixed", fixed=0.7)).bandwidth == 0.7
        assert kernel.refresh(pts, BandwidthPolicy("median", 0.5)).bandwidth == median_bandwidth(pts, 0.5)

    def test_unknown_policy(self):
        """Unknown bandwidth policy names are rejected."""
        with pytest.raises(ContractError):
            BandwidthPolicy("silverman")


class TestFeatureKernel:

    def test_gradient_through_encoder(self):
        """Feature-kernel gradient chains through the encoder."""
        rng = np.random.default_rng(21)
        for _ in range(100):
            enc = init_gaussian(layer_specs(3, [5], 2), 0.6, rng)
            kernel = FeatureKernel(RbfKernel(rng.uniform(0.5, 2.0)), enc)
            x, x2 = rng.uniform(-1.0, 1.0, size=3), rng.uniform(-1.0, 1.0, size=3)
            fd = central_difference(lambda z: kernel.eval(z, x2), x)
            assert relative_error(kernel.grad_x(x, x2), fd) <= 1e-5

    def test_cross_repulsion_matches_pointwise_sum(self, rng):
        """Summed repulsion equals the pointwise gradient sum."""
        enc = init_gaussian(layer_specs(3, [4], 2), 0.8, rng)
        kernel = FeatureKernel(RbfKernel(0.9), enc)
        particles = rng.normal(size=(4, 3))
        queries = rng.normal(size=(2, 3))
        _, rep = kernel.cross(particles, queries)
        for q in range(2):
            expected = sum(kernel.grad_x(particles[j], queries[q]) for j in range(4))
            np.testing.assert_allclose(rep[q], expected, atol=1e-12)

    def test_no_embedder_reduces_to_base(self, rng):
        """Without an encoder the feature kernel is the base kernel."""
        base = RbfKernel(1.1)
        kernel = FeatureKernel(base)
        x, x2 = rng.normal(size=2), rng.normal(size=2)
        assert kernel.eval(x, x2) == base.eval(x, x2)
        np.testing.assert_array_equal(kernel.grad_x(x, x2), base.grad_x(x, x2))

    def test_encoder_updates_are_seen(self, rng):
        """Encoder updates change kernel values."""
        enc = init_gaussian(layer_specs(2, [], 2), 1.0, rng)
        kernel = FeatureKernel(RbfKernel(1.0), enc)
        x, x2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        before = kernel.eval(x, x2)
        enc.set_flat_params(enc.flat_params() * 2.0)
        assert kernel.eval(x, x2) != before

    def test_with_bandwidth_keeps_embedder(self, rng):
        """with_bandwidth keeps the encoder reference."""
        enc = init_gaussian(layer_specs(2, [], 2), 1.0, rng)
        kernel = FeatureKernel(RbfKernel(1.0), enc).with_bandwidth(0.25)
        assert kernel.bandwidth == 0.25
        assert kernel.embedder is enc
