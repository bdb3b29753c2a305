"""Bilinear resampling conventions and the aspect-preserving fit."""

import numpy as np
import pytest

from deskclip.data.imaging import hflip, resize_and_pad, resize_bilinear
from deskclip.errors import ShapeError


def test_same_size_is_identity():
    rng = np.random.default_rng(0)
    img = rng.random((3, 17, 23), dtype=np.float32)
    out = resize_bilinear(img, 17, 23)
    assert np.max(np.abs(out - img)) == 0.0


def test_checkerboard_down_to_mean():
    img = np.zeros((1, 2, 2), dtype=np.float32)
    img[0, 0, 0] = 1.0
    img[0, 1, 1] = 1.0
    out = resize_bilinear(img, 1, 1)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == pytest.approx(0.5, abs=1e-7)


def test_constant_image_stays_constant():
    img = np.full((3, 9, 9), 0.37, dtype=np.float32)
    out = resize_bilinear(img, 31, 13)
    np.testing.assert_allclose(out, 0.37, atol=1e-6)


def test_down_then_up_stays_bounded():
    rng = np.random.default_rng(1)
    img = rng.random((3, 64, 64), dtype=np.float32)
    down = resize_bilinear(img, 16, 16)
    up = resize_bilinear(down, 64, 64)
    assert up.min() >= 0.0 and up.max() <= 1.0
    assert np.mean(np.abs(up - img)) < 0.3


def test_upscale_shape_and_range():
    rng = np.random.default_rng(2)
    img = rng.random((3, 8, 8), dtype=np.float32)
    out = resize_bilinear(img, 24, 24)
    assert out.shape == (3, 24, 24)
    assert out.min() >= img.min() - 1e-6
    assert out.max() <= img.max() + 1e-6


def test_bad_target_rejected():
    img = np.zeros((3, 4, 4), dtype=np.float32)
    with pytest.raises(ShapeError):
        resize_bilinear(img, 0, 4)
    with pytest.raises(ShapeError):
        resize_bilinear(np.zeros((4, 4), dtype=np.float32), 2, 2)


def test_hflip_mirrors_and_double_flip_restores():
    rng = np.random.default_rng(3)
    img = rng.random((3, 5, 7), dtype=np.float32)
    flipped = hflip(img)
    np.testing.assert_array_equal(flipped[:, :, 0], img[:, :, -1])
    np.testing.assert_array_equal(hflip(flipped), img)


class TestResizeAndPad:
    def test_square_into_square_no_padding(self):
        rng = np.random.default_rng(4)
        img = rng.random((3, 16, 16), dtype=np.float32)
        out = resize_and_pad(img, 16, 16, fill=0.0)
        np.testing.assert_array_equal(out, img)

    def test_wide_image_pads_rows(self):
        img = np.ones((3, 10, 20), dtype=np.float32)
        out = resize_and_pad(img, 20, 20, fill=0.25)
        assert out.shape == (3, 20, 20)
        # content occupies the middle 10 rows, padding above and below
        assert np.all(out[:, 0, :] == 0.25)
        assert np.all(out[:, -1, :] == 0.25)
        assert np.all(out[:, 10, :] == 1.0)

    def test_aspect_ratio_preserved(self):
        img = np.ones((3, 30, 10), dtype=np.float32)
        out = resize_and_pad(img, 12, 12, fill=0.0)
        content_cols = (out.sum(axis=(0, 1)) > 0).sum()
        content_rows = (out.sum(axis=(0, 2)) > 0).sum()
        assert content_rows == 12
        assert content_cols == 4
