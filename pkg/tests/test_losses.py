"""Loss arithmetic against hand-computed values, plus gradient checks."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sketchgen.losses import (
    GramWeights,
    IdentityExtractor,
    RandomConvPyramid,
    gan_loss_d,
    gan_loss_g,
    gram_loss,
    gram_matrix,
    l1_loss,
    perceptual_loss,
)
from sketchgen.nn import Tensor, check_gradients

TOL = 1e-4


class TestL1:
    def test_identity_is_zero(self, rng):
        x = rng.uniform(size=(4, 4, 3))
        assert l1_loss(x, x).item() == 0.0

    def test_unit_gap(self):
        assert l1_loss(np.ones((3, 3)), np.zeros((3, 3))).item() == pytest.approx(1.0)

    def test_two_element_case(self):
        got = l1_loss(np.array([0.5, 0.0]), np.array([0.0, 1.0])).item()
        assert got == pytest.approx(0.75)

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4))
        assert l1_loss(a, b).item() == pytest.approx(l1_loss(b, a).item())

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            l1_loss(np.zeros((2, 2)), np.zeros((3, 2)))


class TestAdversarial:
    def test_coin_flip_value(self):
        got = gan_loss_d(np.array([0.5]), np.array([0.5])).item()
        assert got == pytest.approx(2 * np.log(0.5), abs=1e-9)

    def test_perfect_discriminator_approaches_zero_from_below(self):
        got = gan_loss_d(np.array([1.0]), np.array([0.0])).item()
        assert -1e-5 < got < 0

    def test_batch_mean_reduction(self):
        got = gan_loss_d(np.array([0.9, 0.9]), np.array([0.1, 0.1])).item()
        assert got == pytest.approx(2 * np.log(0.9), abs=1e-9)

    def test_generator_fooling_is_near_zero(self):
        assert gan_loss_g(np.array([1.0 - 1e-7])).item() == pytest.approx(0.0, abs=1e-5)

    def test_generator_coin_flip(self):
        assert gan_loss_g(np.array([0.5])).item() == pytest.approx(np.log(2), abs=1e-9)

    @given(st.floats(0.05, 0.9), st.floats(0.01, 0.09))
    def test_generator_monotone(self, p, drop):
        assert gan_loss_g(np.array([p - drop])).item() > gan_loss_g(np.array([p])).item()

    def test_gradients(self, rng):
        d_real = Tensor(rng.uniform(0.2, 0.8, size=4), requires_grad=True)
        d_fake = Tensor(rng.uniform(0.2, 0.8, size=4), requires_grad=True)
        assert check_gradients(lambda: gan_loss_d(d_real, d_fake), [d_real, d_fake]) < TOL
        assert check_gradients(lambda: gan_loss_g(d_fake), [d_fake]) < TOL


class TestPerceptual:
    def test_identity_is_zero(self, rng):
        x = rng.uniform(size=(8, 8, 3))
        ext = RandomConvPyramid()
        assert perceptual_loss(x, x, ext).item() == 0.0

    def test_rms_convention(self):
        g = np.full((2, 2), 0.3)
        r = np.zeros((2, 2))
        got = perceptual_loss(g, r, IdentityExtractor()).item()
        assert got == pytest.approx(0.3, abs=1e-12)

    def test_symmetric(self, rng):
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        ext = RandomConvPyramid()
        assert perceptual_loss(a, b, ext).item() == pytest.approx(
            perceptual_loss(b, a, ext).item()
        )

    def test_gradient(self, rng):
        ext = RandomConvPyramid(in_channels=1, widths=(4, 8))
        g = Tensor(rng.uniform(size=(4, 4, 1)), requires_grad=True)
        r = rng.uniform(size=(4, 4, 1))
        assert check_gradients(lambda: perceptual_loss(g, r, ext), [g]) < TOL


class TestGram:
    def test_zero_features(self):
        np.testing.assert_array_equal(gram_matrix(np.zeros((3, 3, 2))).data, np.zeros((2, 2)))

    def test_constant_single_channel(self):
        got = gram_matrix(np.full((5, 2, 1), 0.7)).data
        np.testing.assert_allclose(got, [[0.49]], atol=1e-12)

    def test_symmetry_exact(self, rng):
        m = gram_matrix(rng.normal(size=(4, 4, 3))).data
        np.testing.assert_array_equal(m, m.T)

    def test_positive_semidefinite(self, rng):
        for _ in range(5):
            m = gram_matrix(rng.normal(size=(6, 5, 4))).data
            assert np.linalg.eigvalsh(m).min() >= -1e-10

    def test_loss_identity_is_zero(self, rng):
        x = rng.uniform(size=(8, 8, 3))
        assert gram_loss(x, x, RandomConvPyramid()).item() == 0.0

    def test_loss_constant_case(self):
        g, r = np.ones((3, 3, 1)), np.zeros((3, 3, 1))
        got = gram_loss(g, r, IdentityExtractor(), GramWeights([1.0])).item()
        assert got == pytest.approx(1.0, abs=1e-12)

    def test_loss_linear_in_weights(self, rng):
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        ext = RandomConvPyramid()
        taps = len(ext(a))
        one = gram_loss(a, b, ext, GramWeights([1.0] * taps)).item()
        two = gram_loss(a, b, ext, GramWeights([2.0] * taps)).item()
        assert two == pytest.approx(2 * one)

    def test_default_weights_are_uniform(self):
        w = GramWeights.uniform(4)
        assert w.alphas == (0.25, 0.25, 0.25, 0.25)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            GramWeights([0.5, -0.1])

    def test_gradient(self, rng):
        ext = RandomConvPyramid(in_channels=1, widths=(4, 8))
        g = Tensor(rng.uniform(size=(4, 4, 1)), requires_grad=True)
        r = rng.uniform(size=(4, 4, 1))
        assert check_gradients(lambda: gram_loss(g, r, ext), [g]) < TOL


class TestPyramid:
    def test_deterministic_across_instances(self, rng):
        x = rng.uniform(size=(16, 16, 3))
        taps1 = RandomConvPyramid(seed=7)(x)
        taps2 = RandomConvPyramid(seed=7)(x)
        for a, b in zip(taps1, taps2):
            np.testing.assert_array_equal(a.data, b.data)

    def test_four_taps_at_full_size(self, rng):
        taps = RandomConvPyramid()(rng.uniform(size=(64, 64, 3)))
        assert len(taps) == 4
        assert [t.shape[0] for t in taps] == [32, 16, 8, 4]

    def test_small_input_still_yields_taps(self, rng):
        taps = RandomConvPyramid()(rng.uniform(size=(4, 4, 3)))
        assert len(taps) >= 1

    def test_embed_is_fixed_length(self, rng):
        ext = RandomConvPyramid()
        v = ext.embed(rng.uniform(size=(64, 64, 3)))
        assert v.shape == (ext.embed_dim,)
        w = ext.embed(rng.uniform(size=(32, 32, 3)))
        assert w.shape == (ext.embed_dim,)

    def test_channel_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            RandomConvPyramid(in_channels=3)(rng.uniform(size=(8, 8, 1)))


def test_l1_gradient(rng):
    g = Tensor(rng.uniform(size=(4, 4, 3)), requires_grad=True)
    r = rng.uniform(size=(4, 4, 3))
    assert check_gradients(lambda: l1_loss(g, r), [g]) < TOL
