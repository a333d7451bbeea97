import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumiflow import radiometry as rad
from lumiflow.render import SceneConfig, render_disentangled, sample_scene


def rendered_pair(seed, size=16):
    scene = sample_scene(seed, SceneConfig(width=size, height=size))
    out = render_disentangled(scene, 0)
    return out["amb"], out["light"]


class TestIlluminationGain:
    def test_paper_values(self):
        assert rad.illumination_gain(1.0) == 2.0
        assert rad.illumination_gain(0.0) == 1.0
        assert rad.illumination_gain(-1.0) == 0.5

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            rad.illumination_gain(float("nan"))
        with pytest.raises(ValueError):
            rad.illumination_gain(float("inf"))

    def test_multiplicative_within_2_ulp(self):
        # Stops drawn on a dyadic grid so a+b is exact and the check isolates
        # the gain function from input-sum rounding.
        rng = np.random.default_rng(42)
        for _ in range(1000):
            a = int(rng.integers(-3 * 1024, 3 * 1024 + 1)) / 1024.0
            b = int(rng.integers(-3 * 1024, 3 * 1024 + 1)) / 1024.0
            lhs = rad.illumination_gain(a + b)
            rhs = rad.illumination_gain(a) * rad.illumination_gain(b)
            assert abs(lhs - rhs) <= 2.0 * math.ulp(max(abs(lhs), abs(rhs)))


class TestCompositeLinear:
    def test_constant_images(self):
        amb = np.full((4, 4, 3), 0.2)
        light = np.full((4, 4, 3), 0.3)
        assert np.allclose(rad.composite_linear(amb, light), 0.5)

    def test_zero_direct_term_is_identity(self, rng):
        amb = rng.uniform(0, 1, (5, 7, 3))
        out = rad.composite_linear(amb, np.zeros_like(amb))
        assert np.array_equal(out, amb)

    def test_matches_neutral_relight_on_rendered_pairs(self):
        for seed in range(5):
            amb, light = rendered_pair(seed)
            composite = rad.composite_linear(amb, light)
            neutral = rad.relight(amb, light, alpha=1.0, gain=1.0, tint=(1, 1, 1))
            assert np.array_equal(composite, neutral)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="dimensions differ"):
            rad.composite_linear(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestRelight:
    def test_hand_evaluated_channels(self):
        amb = np.full((2, 2, 3), 0.1)
        light = np.full((2, 2, 3), 0.4)
        out = rad.relight(amb, light, alpha=0.5, gain=2.0, tint=(1.0, 0.5, 0.25))
        assert np.allclose(out[..., 0], 0.85)
        assert np.allclose(out[..., 1], 0.45)
        assert np.allclose(out[..., 2], 0.25)

    def test_zero_gain_extinguishes_light(self, rng):
        amb = rng.uniform(0, 1, (6, 6, 3))
        light = rng.uniform(0, 1, (6, 6, 3))
        out = rad.relight(amb, light, alpha=0.7, gain=0.0)
        assert np.array_equal(out, 0.7 * amb)

    def test_linear_in_gain(self):
        for seed in range(3):
            amb, light = rendered_pair(seed)
            rng = np.random.default_rng(seed + 100)
            g1, g2 = rng.uniform(0.1, 4.0, 2)
            alpha = rng.uniform(0.0, 1.0)
            tint = rng.uniform(0.0, 1.0, 3)
            lhs = rad.relight(amb, light, alpha, g1 + g2, tint)
            rhs = (
                rad.relight(amb, light, alpha, g1, tint)
                + rad.relight(amb, light, alpha, g2, tint)
                - alpha * amb
            )
            assert np.max(np.abs(lhs - rhs)) < 1e-6

    def test_tint_annihilation(self):
        amb, light = rendered_pair(9)
        out = rad.relight(amb, light, alpha=1.0, gain=1.0, tint=(1.0, 0.0, 0.0))
        assert np.array_equal(out[..., 1], amb[..., 1])
        assert np.array_equal(out[..., 2], amb[..., 2])

    def test_invalid_parameters(self):
        img = np.zeros((2, 2, 3))
        with pytest.raises(ValueError):
            rad.relight(img, img, alpha=1.5)
        with pytest.raises(ValueError):
            rad.relight(img, img, tint=(2.0, 0.0, 0.0))
        with pytest.raises(ValueError):
            rad.relight(img, img, gain=-1.0)


class TestLuminancePercentile:
    def test_constant_image(self, rng):
        v = 0.37
        img = np.full((10, 10, 3), v)
        expected = v * rad.REC709_LUMA.sum()
        for seed in (0, 1, 99):
            assert rad.luminance_percentile(img, seed=seed) == pytest.approx(expected, rel=1e-12)

    def test_exhaustive_matches_brute_force(self, rng):
        img = rng.uniform(0, 2, (13, 11, 3))
        # independent oracle: sort all pixel luminances, nearest rank
        lum = np.sort((img @ rad.REC709_LUMA).ravel())
        rank = math.ceil(99.95 / 100 * lum.size)
        expected = lum[rank - 1]
        got = rad.luminance_percentile(img, n_samples=13 * 11)
        assert got == expected

    def test_median_brute_force(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        lum = np.sort((img @ rad.REC709_LUMA).ravel())
        rank = math.ceil(0.5 * lum.size)
        assert rad.luminance_percentile(img, percentile=50, n_samples=64) == lum[rank - 1]

    def test_deterministic_per_seed(self, rng):
        img = rng.uniform(0, 3, (64, 64, 3))
        a = rad.luminance_percentile(img, seed=7)
        b = rad.luminance_percentile(img, seed=7)
        assert a == b

    def test_permutation_invariant_exhaustive(self, rng):
        img = rng.uniform(0, 1, (6, 6, 3))
        perm = rng.permutation(36)
        shuffled = img.reshape(36, 3)[perm].reshape(6, 6, 3)
        assert rad.luminance_percentile(img, n_samples=36) == rad.luminance_percentile(
            shuffled, n_samples=36
        )

    def test_domain_errors(self):
        img = np.zeros((2, 2, 3))
        with pytest.raises(ValueError):
            rad.luminance_percentile(img, percentile=0.0)
        with pytest.raises(ValueError):
            rad.luminance_percentile(img, n_samples=0)
        with pytest.raises(ValueError):
            rad.luminance_percentile(np.zeros((0, 2, 3)))


class TestToneMap:
    def test_normalization_anchor(self):
        img = np.full((2, 2, 3), 0.8)
        assert np.array_equal(rad.tone_map(img, 0.8), np.ones((2, 2, 3)))

    def test_quarter_value_high_precision(self):
        import mpmath

        expected = float(mpmath.power(mpmath.mpf(1) / 4, 1 / mpmath.mpf("2.2")))
        img = np.full((1, 1, 3), 0.25)
        got = rad.tone_map(img, 1.0)[0, 0, 0]
        assert abs(got - expected) < 1e-4

    def test_clips_before_gamma(self):
        img = np.full((2, 2, 3), 4.0)
        assert np.array_equal(rad.tone_map(img, 1.0), np.ones((2, 2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(
        a=st.floats(0.0, 10.0),
        b=st.floats(0.0, 10.0),
        e_max=st.floats(1e-3, 10.0),
    )
    def test_monotone_and_bounded(self, a, b, e_max):
        lo, hi = sorted((a, b))
        out = rad.tone_map(np.array([[[lo] * 3, [hi] * 3]]), e_max)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out[0, 0, 0] <= out[0, 1, 0]

    def test_invalid_e_max(self):
        with pytest.raises(ValueError):
            rad.tone_map(np.zeros((2, 2, 3)), 0.0)
        with pytest.raises(ValueError):
            rad.tone_map(np.zeros((2, 2, 3)), -1.0)
