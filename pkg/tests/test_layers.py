"""Positional tables, patch extraction, and init helpers."""

import numpy as np
import pytest

from deskclip.errors import ShapeError
from deskclip.models.layers import patchify, sincos_1d, sincos_2d, trunc_normal


class TestPatchify:
    @pytest.mark.parametrize(
        "size,patch,count",
        [(224, 16, 196), (336, 14, 576), (384, 8, 2304)],
    )
    def test_token_counts(self, size, patch, count):
        images = np.zeros((1, 3, size, size), dtype=np.float32)
        out = patchify(images, patch)
        assert out.shape == (1, count, 3 * patch * patch)

    def test_row_major_grid_order(self):
        # encode grid coordinates in the pixels: patch (gy, gx) is filled
        # with the constant gy*10 + gx
        patch = 2
        img = np.zeros((1, 1, 4, 6), dtype=np.float32)
        for gy in range(2):
            for gx in range(3):
                img[0, 0, gy * 2:(gy + 1) * 2, gx * 2:(gx + 1) * 2] = gy * 10 + gx
        out = patchify(img, patch)
        flat = out[0, :, 0]
        np.testing.assert_array_equal(flat, [0, 1, 2, 10, 11, 12])

    def test_patch_contents_flattened(self):
        rng = np.random.default_rng(3)
        img = rng.random((2, 3, 8, 8)).astype(np.float32)
        out = patchify(img, 8)
        # single patch covering the image: plain channel-major flatten
        np.testing.assert_array_equal(out[1, 0], img[1].reshape(-1))

    def test_indivisible_raises(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((1, 3, 30, 32), dtype=np.float32), 16)

    def test_bad_rank_raises(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((3, 32, 32), dtype=np.float32), 16)


class TestSincos:
    def test_origin_row_is_zeros_and_ones(self):
        # position (0,0): every sine component is 0, every cosine is 1
        table = sincos_2d(4, 4, 16)
        row = table[0]
        assert np.sum(row == 1.0) == 8
        assert np.sum(row == 0.0) == 8

    def test_deterministic(self):
        a = np.array(sincos_2d(14, 14, 64))
        b = np.array(sincos_2d(14, 14, 64))
        np.testing.assert_array_equal(a, b)
        assert a.tobytes() == b.tobytes()

    def test_shape(self):
        assert sincos_2d(7, 5, 32).shape == (35, 32)
        assert sincos_1d(9, 10).shape == (9, 10)

    def test_width_divisibility(self):
        with pytest.raises(ShapeError):
            sincos_2d(4, 4, 18)
        with pytest.raises(ShapeError):
            sincos_1d(4, 7)

    def test_values_bounded(self):
        table = sincos_2d(24, 24, 96)
        assert np.all(np.abs(table) <= 1.0)

    def test_distinct_positions_distinct_rows(self):
        table = sincos_2d(6, 6, 32)
        assert len({r.tobytes() for r in table}) == 36


class TestTruncNormal:
    def test_bound_respected(self):
        rng = np.random.default_rng(0)
        w = trunc_normal(rng, (4000,), std=0.02)
        assert np.max(np.abs(w)) <= 2.0 * 0.02 + 1e-12

    def test_std_roughly_matches(self):
        rng = np.random.default_rng(1)
        w = trunc_normal(rng, (200, 200), std=0.02)
        assert 0.01 < w.std() < 0.03
