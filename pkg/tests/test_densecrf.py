import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import random_image, random_unary
from sisweak.densecrf import (
    CrfParams,
    binarize,
    brute_force_minimum,
    default_params,
    energy,
    mean_field,
    refine_mask,
    unary_energy,
)


def test_defaults():
    p = default_params()
    assert (p.w1, p.w2, p.theta_alpha, p.theta_beta, p.theta_gamma) == (4, 3, 70, 13, 1)
    assert p.iterations == 10


@pytest.mark.parametrize("kw", [{"theta_alpha": 0}, {"theta_gamma": -1}, {"w1": -0.1},
                                {"iterations": 0}, {"iterations": 2.5}])
def test_params_validated(kw):
    with pytest.raises(ValueError):
        CrfParams(**kw)


def test_unary_is_clamped():
    u = unary_energy(np.stack([np.zeros((2, 2)), np.ones((2, 2))], axis=2))
    assert np.isfinite(u).all()
    assert u.max() == pytest.approx(-math.log(1e-8))


class TestMeanField:
    def test_uniform_fixed_point(self):
        img = np.full((6, 6, 3), 120.0)
        q = mean_field(img, np.full((6, 6, 2), 0.5), filter="exact")
        np.testing.assert_allclose(q, 0.5, atol=1e-12)

    @pytest.mark.parametrize("iterations", [1, 4])
    def test_no_pairwise_returns_unary(self, iterations):
        rng = np.random.default_rng(0)
        u = random_unary(rng, 5, 7)
        q = mean_field(random_image(rng, 5, 7), u, CrfParams(w1=0, w2=0, iterations=iterations))
        np.testing.assert_allclose(q, u, atol=1e-9)

    def test_rejects_bad_inputs(self):
        img = np.zeros((4, 4, 3))
        with pytest.raises(ValueError):
            mean_field(img, np.full((4, 5, 2), 0.5))
        with pytest.raises(ValueError):
            mean_field(img, np.full((4, 4, 2), 0.7))
        with pytest.raises(ValueError):
            mean_field(np.zeros((4, 4, 1)), np.full((4, 4, 2), 0.5))
        with pytest.raises(ValueError):
            mean_field(img, np.full((4, 4, 2), 0.5), filter="fast")

    def test_normalized_every_iteration(self):
        rng = np.random.default_rng(1)
        seen = []

        def check(it, q):
            seen.append(it)
            assert np.max(np.abs(q.sum(axis=2) - 1)) <= 1e-5

        mean_field(random_image(rng, 8, 8), random_unary(rng, 8, 8), callback=check)
        assert seen == list(range(1, 11))

    def test_two_region_exact_vs_approximate(self):
        rng = np.random.default_rng(16)
        img = np.zeros((16, 16, 3))
        img[:, 8:] = 200.0
        img += rng.normal(0, 5, img.shape)
        fg = np.clip(np.where(img[..., 0] > 100, 0.7, 0.3) + rng.normal(0, 0.15, (16, 16)),
                     0.01, 0.99)
        u = np.stack([1 - fg, fg], axis=2)
        a = mean_field(img, u, filter="approximate")
        e = mean_field(img, u, filter="exact")
        assert np.max(np.abs(a - e)) <= 1e-3

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31))
    def test_label_swap_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        img, u = random_image(rng, 5, 5), random_unary(rng, 5, 5)
        q = mean_field(img, u, filter="exact")
        q_swapped = mean_field(img, u[..., ::-1], filter="exact")
        np.testing.assert_allclose(q_swapped[..., ::-1], q, atol=1e-12)

    def test_smooths_isolated_noise(self):
        img = np.full((10, 10, 3), 80.0)
        fg = np.full((10, 10), 0.8)
        fg[5, 5] = 0.3
        q = mean_field(img, np.stack([1 - fg, fg], axis=2), filter="exact")
        assert q[5, 5, 1] > 0.5


class TestEnergy:
    def test_two_pixel_hand_value(self):
        img = np.full((1, 2, 3), 50.0)
        u = np.full((1, 2, 2), 0.5)
        got = energy(img, np.array([[0, 1]]), u, CrfParams(w1=1, w2=0))
        # Identical colours, positions one pixel apart: the appearance kernel
        # adds a tiny spatial falloff exp(-1/(2*70^2)).
        assert got == pytest.approx(2 * math.log(2) + math.exp(-1 / (2 * 70**2)), abs=1e-12)

    def test_identical_features_hand_value(self):
        # Huge spatial stddev makes the kernel exactly exp(0) in float64.
        img = np.full((1, 2, 3), 50.0)
        got = energy(img, np.array([[1, 0]]), np.full((1, 2, 2), 0.5),
                     CrfParams(w1=1, w2=0, theta_alpha=1e12))
        assert got == pytest.approx(2 * math.log(2) + 1, abs=1e-12)

    def test_no_pairwise_is_unary_sum(self):
        rng = np.random.default_rng(3)
        u = random_unary(rng, 3, 4)
        lab = rng.integers(0, 2, size=(3, 4))
        expected = -np.log(np.take_along_axis(u, lab[..., None], axis=2)).sum()
        assert energy(random_image(rng, 3, 4), lab, u, CrfParams(w1=0, w2=0)) == pytest.approx(expected)

    def test_uniform_labeling_has_no_pairwise_cost(self):
        rng = np.random.default_rng(4)
        img, u = random_image(rng, 3, 3), random_unary(rng, 3, 3)
        ones = np.ones((3, 3), dtype=int)
        assert energy(img, ones, u) == pytest.approx(energy(img, ones, u, CrfParams(w1=0, w2=0)))

    def test_brute_force_limits(self):
        with pytest.raises(ValueError):
            brute_force_minimum(np.zeros((4, 4, 3)), np.full((4, 4, 2), 0.5))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_brute_force_beats_mean_field(self, seed):
        rng = np.random.default_rng(seed)
        img, u = random_image(rng, 3, 3), random_unary(rng, 3, 3)
        best, lab = brute_force_minimum(img, u)
        assert best == pytest.approx(energy(img, lab, u))
        q = mean_field(img, u, filter="exact")
        assert best <= energy(img, q.argmax(axis=2), u) + 1e-12


def test_refine_mask_and_binarize():
    img = np.full((6, 6, 3), 90.0)
    fg = np.full((6, 6), 0.5)
    m, q = refine_mask(img, fg, filter="exact")
    assert not m.any()
    np.testing.assert_array_equal(m, binarize(fg))
    assert binarize(np.array([[0.5, 0.50001]])).tolist() == [[False, True]]
