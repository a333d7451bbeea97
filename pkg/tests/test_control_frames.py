import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumiflow import control_frames as cf


def boxes(min_side=0.05):
    def build(draw):
        x0 = draw(st.floats(0.0, 1.0 - min_side))
        y0 = draw(st.floats(0.0, 1.0 - min_side))
        x1 = draw(st.floats(x0 + min_side, 1.0))
        y1 = draw(st.floats(y0 + min_side, 1.0))
        return cf.BoundingBox(x0, y0, x1, y1)

    return st.composite(build)()


def brute_force_mask(box, w, h):
    """Independent loop-based rasterization oracle (pixel-center rule)."""
    mask = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            cx, cy = (j + 0.5) / w, (i + 0.5) / h
            mask[i, j] = box.x0 <= cx < box.x1 and box.y0 <= cy < box.y1
    return mask


class TestBoundingBox:
    def test_validation(self):
        with pytest.raises(ValueError):
            cf.BoundingBox(0.5, 0.0, 0.5, 1.0)  # zero width
        with pytest.raises(ValueError):
            cf.BoundingBox(-0.1, 0.0, 0.5, 1.0)
        with pytest.raises(ValueError):
            cf.BoundingBox(0.0, 0.8, 1.0, 0.2)  # inverted

    def test_area_and_center(self):
        b = cf.BoundingBox(0.2, 0.4, 0.6, 0.9)
        assert b.area == pytest.approx(0.2)
        assert b.center == pytest.approx((0.4, 0.65))


class TestMovementMap:
    def test_full_frame_boxes(self):
        full = cf.BoundingBox(0.0, 0.0, 1.0, 1.0)
        mm = cf.encode_movement_map(full, full, (8, 8))
        assert np.array_equal(mm, np.ones((8, 8, 3)))

    def test_disjoint_halves(self):
        src = cf.BoundingBox(0.0, 0.0, 0.5, 1.0)
        tgt = cf.BoundingBox(0.5, 0.0, 1.0, 1.0)
        mm = cf.encode_movement_map(src, tgt, (8, 8))
        assert np.array_equal(mm[:, :4, 0], np.ones((8, 4)))
        assert np.array_equal(mm[:, 4:, 0], np.zeros((8, 4)))
        assert np.array_equal(mm[:, 4:, 1], np.ones((8, 4)))
        assert np.array_equal(mm[:, :4, 1], np.zeros((8, 4)))
        assert not np.any(mm[..., 0] * mm[..., 1])  # disjoint

    def test_overlapping_boxes_set_both(self):
        src = cf.BoundingBox(0.0, 0.0, 0.75, 1.0)
        tgt = cf.BoundingBox(0.25, 0.0, 1.0, 1.0)
        mm = cf.encode_movement_map(src, tgt, (8, 8))
        both = (mm[..., 0] == 1) & (mm[..., 1] == 1)
        assert both.any()

    @settings(max_examples=40, deadline=None)
    @given(src=boxes(), tgt=boxes())
    def test_channels_and_counts(self, src, tgt):
        w = h = 16
        try:
            mm = cf.encode_movement_map(src, tgt, (w, h))
        except cf.DegenerateBoxError:
            assert not brute_force_mask(src, w, h).any() or not brute_force_mask(tgt, w, h).any()
            return
        assert np.array_equal(mm[..., 1], mm[..., 2])  # G == B bitwise
        assert mm[..., 0].sum() == brute_force_mask(src, w, h).sum()
        assert mm[..., 1].sum() == brute_force_mask(tgt, w, h).sum()
        assert set(np.unique(mm)) <= {0.0, 1.0}

    def test_degenerate_box_error(self):
        sliver = cf.BoundingBox(0.0, 0.0, 0.01, 0.01)  # no pixel center at 4x4
        with pytest.raises(cf.DegenerateBoxError):
            cf.encode_movement_map(sliver, sliver, (4, 4))


class TestConstantFrames:
    def test_color_frames(self):
        white = cf.encode_color_frame((1, 1, 1), (4, 4))
        assert np.array_equal(white, np.ones((4, 4, 3)))
        red = cf.encode_color_frame((1, 0, 0), (4, 4))
        assert np.array_equal(red[..., 0], np.ones((4, 4)))
        assert np.array_equal(red[..., 1:], np.zeros((4, 4, 2)))
        other = cf.encode_color_frame((0.3, 0.7, 0.2), (4, 4))
        assert np.all(red != other)

    def test_intensity_values(self):
        assert np.all(cf.encode_intensity_frame(0.0, (2, 2)) == 0.5)
        assert np.all(cf.encode_intensity_frame(3.0, (2, 2)) == 1.0)
        assert np.all(cf.encode_intensity_frame(-5.0, (2, 2)) == 0.0)  # clamped

    def test_intensity_encoding_invertible(self):
        for s in np.linspace(-3, 3, 25):
            frame = cf.encode_intensity_frame(s, (1, 1))
            assert abs(cf.decode_intensity_value(frame[0, 0, 0]) - s) < 1e-12

    def test_bad_tint(self):
        with pytest.raises(ValueError):
            cf.encode_color_frame((1.5, 0, 0), (2, 2))


class TestObjectCrop:
    def test_full_frame_is_resize(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        out = cf.crop_object_frame(img, cf.BoundingBox(0, 0, 1, 1), (8, 8))
        assert out.shape == (8, 8, 3)
        assert np.allclose(out, img)

    def test_constant_image(self):
        img = np.full((8, 8, 3), 0.42)
        out = cf.crop_object_frame(img, cf.BoundingBox(0.1, 0.2, 0.6, 0.9), (8, 8))
        assert np.allclose(out, 0.42)

    def test_checker_quadrant(self):
        # 2x2 checker; cropping one quadrant must give that quadrant's color
        img = np.zeros((2, 2, 3))
        img[0, 1] = 1.0
        img[1, 0] = 1.0
        out = cf.crop_object_frame(img, cf.BoundingBox(0.0, 0.0, 0.5, 0.5), (4, 4))
        assert np.array_equal(out, np.zeros((4, 4, 3)))
        out = cf.crop_object_frame(img, cf.BoundingBox(0.5, 0.0, 1.0, 0.5), (4, 4))
        assert np.array_equal(out, np.ones((4, 4, 3)))


class TestAugmentBox:
    def test_identity_range_returns_input(self):
        b = cf.BoundingBox(0.2, 0.3, 0.6, 0.8)
        assert cf.augment_box(b, seed=1, scale_range=(1.0, 1.0)) == b

    def test_center_preserved(self):
        b = cf.BoundingBox(0.4, 0.4, 0.6, 0.6)  # far from edges: no clamping
        for seed in range(20):
            out = cf.augment_box(b, seed)
            assert abs(out.center[0] - b.center[0]) < 1e-12
            assert abs(out.center[1] - b.center[1]) < 1e-12

    def test_deterministic(self):
        b = cf.BoundingBox(0.1, 0.1, 0.9, 0.5)
        assert cf.augment_box(b, seed=44) == cf.augment_box(b, seed=44)

    def test_clamped_to_unit_square(self):
        b = cf.BoundingBox(0.0, 0.0, 0.9, 0.9)
        for seed in range(20):
            out = cf.augment_box(b, seed, scale_range=(1.2, 1.2))
            assert 0.0 <= out.x0 < out.x1 <= 1.0
            assert 0.0 <= out.y0 < out.y1 <= 1.0
