"""Any-resolution tiling: grid selection, the scale-consistency
invariant, crop extraction, and token accounting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskclip.errors import ConfigError, ShapeError
from deskclip.mllm.anyres import (
    AnyResGrid,
    select_grid,
    tile,
    visual_token_count,
    wasted_fraction,
)


class TestGridSelection:
    def test_square_doubled_picks_two_by_two(self):
        g = select_grid(672, 672)
        assert (g.rows, g.cols) == (2, 2)

    def test_wide_strip_picks_one_by_four(self):
        g = select_grid(336, 1344)
        assert (g.rows, g.cols) == (1, 4)

    def test_tall_strip_picks_four_by_one(self):
        g = select_grid(1344, 336)
        assert (g.rows, g.cols) == (4, 1)

    def test_base_sized_image_picks_identity(self):
        g = select_grid(336, 336)
        assert (g.rows, g.cols) == (1, 1)

    def test_small_image_stays_single_tile(self):
        # upscaling buys no effective resolution, so a tiny image never
        # earns a multi-tile grid
        g = select_grid(48, 64)
        assert (g.rows, g.cols) == (1, 1)

    def test_landscape_beats_portrait_on_ties(self):
        g = select_grid(500, 500, allowed=((2, 1), (1, 2)))
        assert (g.rows, g.cols) == (1, 2)

    def test_bad_sizes(self):
        with pytest.raises(ConfigError):
            select_grid(0, 100)
        with pytest.raises(ConfigError):
            select_grid(100, -3)

    def test_empty_allowed_set(self):
        with pytest.raises(ConfigError):
            select_grid(100, 100, allowed=())

    def test_oversized_grid_rejected(self):
        with pytest.raises(ConfigError):
            select_grid(100, 100, allowed=((5, 1),))
        with pytest.raises(ConfigError):
            select_grid(100, 100, allowed=((3, 3),))

    @given(
        h=st.integers(min_value=1, max_value=2500),
        w=st.integers(min_value=1, max_value=2500),
    )
    @settings(max_examples=300, deadline=None)
    def test_doubling_never_increases_waste_fraction(self, h, w):
        before = wasted_fraction(h, w, select_grid(h, w))
        after = wasted_fraction(2 * h, 2 * w, select_grid(2 * h, 2 * w))
        assert after <= before + 1e-12

    @given(
        h=st.integers(min_value=1, max_value=3000),
        w=st.integers(min_value=1, max_value=3000),
    )
    @settings(max_examples=200, deadline=None)
    def test_selection_is_argmin_of_waste(self, h, w):
        from deskclip.mllm.anyres import DEFAULT_ALLOWED

        g = select_grid(h, w)
        chosen = wasted_fraction(h, w, g)
        floor = min(
            wasted_fraction(h, w, AnyResGrid(r, c)) for r, c in DEFAULT_ALLOWED
        )
        assert chosen == pytest.approx(floor, abs=1e-12)


class TestGridValidation:
    def test_crops_counts_thumbnail(self):
        assert AnyResGrid(2, 2).crops == 5
        assert AnyResGrid(1, 1).crops == 2
        assert AnyResGrid(1, 4).crops == 5

    @pytest.mark.parametrize("rows,cols", [(0, 1), (1, 0), (5, 1), (3, 3)])
    def test_validate_rejects(self, rows, cols):
        with pytest.raises(ConfigError):
            AnyResGrid(rows, cols).validate()

    def test_bad_base(self):
        with pytest.raises(ConfigError):
            AnyResGrid(1, 1, base=0).validate()


class TestTiling:
    def test_exact_canvas_tiles_are_subblocks(self):
        rng = np.random.default_rng(0)
        img = rng.random((3, 16, 16)).astype(np.float32)
        grid = AnyResGrid(2, 2, base=8)
        crops = tile(img, grid)
        assert len(crops) == 5
        np.testing.assert_array_equal(crops[0], img[:, :8, :8])
        np.testing.assert_array_equal(crops[1], img[:, :8, 8:])
        np.testing.assert_array_equal(crops[2], img[:, 8:, :8])
        np.testing.assert_array_equal(crops[3], img[:, 8:, 8:])

    def test_all_crops_base_sized(self):
        img = np.zeros((3, 100, 260), dtype=np.float32)
        grid = AnyResGrid(1, 3, base=64)
        crops = tile(img, grid)
        assert len(crops) == 4
        for c in crops:
            assert c.shape == (3, 64, 64)

    def test_thumbnail_is_last_and_global(self):
        # left half black, right half white: every grid tile is
        # monochrome but the trailing thumbnail sees both halves
        img = np.zeros((3, 32, 64), dtype=np.float32)
        img[:, :, 32:] = 1.0
        crops = tile(img, AnyResGrid(1, 2, base=32), fill=0.0)
        assert float(crops[0].max()) == 0.0
        assert float(crops[1].min()) == 1.0
        thumb = crops[-1]
        assert float(thumb.std()) > 0.1

    def test_padding_uses_fill(self):
        img = np.full((3, 10, 32), 0.7, dtype=np.float32)
        crops = tile(img, AnyResGrid(1, 1, base=32), fill=0.25)
        first = crops[0]
        # aspect-preserved content occupies 10 rows, pad rows carry fill
        assert float(first[:, 0, :].max()) == pytest.approx(0.25)
        assert float(first[:, -1, :].max()) == pytest.approx(0.25)

    def test_rejects_bad_rank(self):
        with pytest.raises(ShapeError):
            tile(np.zeros((32, 32)), AnyResGrid(1, 1, base=32))


class TestTokenCount:
    def test_two_by_two_at_default_base(self):
        # 4 tiles + thumbnail, each (336/14)^2 = 576 tokens
        assert visual_token_count(AnyResGrid(2, 2, base=336), patch=14) == 2880

    def test_single_tile(self):
        assert visual_token_count(AnyResGrid(1, 1, base=336), patch=14) == 1152

    def test_indivisible_patch(self):
        with pytest.raises(ShapeError):
            visual_token_count(AnyResGrid(1, 1, base=336), patch=13)
        with pytest.raises(ShapeError):
            visual_token_count(AnyResGrid(1, 1, base=336), patch=0)
