"""Any-resolution tiling.

A fixed-resolution encoder handles arbitrary input sizes by choosing a
tile grid, fitting the image into it aspect-preserved, slicing out
base-sized tiles, and appending one global base-sized thumbnail as the
last crop. Grid selection minimizes the wasted fraction of the grid
canvas (usable area is capped at the original image area, so upscaling
buys nothing), breaking ties by the most retained pixels, then fewer
tiles, then a landscape orientation. The retained-pixels tie-break is
what sends a 672x672 image to the 2x2 grid instead of the equally
waste-free 1x1: the larger grid keeps four times the pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from ..data.imaging import resize_and_pad

DEFAULT_BASE = 336
DEFAULT_ALLOWED = ((1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 2), (1, 4), (4, 1))
MAX_GRID_DIM = 4
MAX_TILES = 6


@dataclass(frozen=True)
class AnyResGrid:
    rows: int
    cols: int
    base: int = DEFAULT_BASE

    def validate(self, max_dim: int = MAX_GRID_DIM, max_tiles: int = MAX_TILES) -> None:
        if self.rows < 1 or self.cols < 1 or self.base < 1:
            raise ConfigError(f"bad grid {self.rows}x{self.cols} at base {self.base}")
        if self.rows > max_dim or self.cols > max_dim:
            raise ConfigError(
                f"grid {self.rows}x{self.cols} exceeds {max_dim} tiles in one dimension"
            )
        if self.rows * self.cols > max_tiles:
            raise ConfigError(
                f"grid {self.rows}x{self.cols} exceeds {max_tiles} tiles total"
            )

    @property
    def crops(self) -> int:
        """Tile count including the trailing global thumbnail."""
        return self.rows * self.cols + 1


def _fit_stats(height: int, width: int, grid_h: int, grid_w: int) -> tuple[float, float]:
    """(effective area, wasted area) of an aspect-preserving fit into a
    grid_h x grid_w canvas. Effective area is capped at the original
    image area: scaling up adds pixels but no information."""
    scale = min(grid_h / height, grid_w / width)
    scaled = (height * scale) * (width * scale)
    effective = min(scaled, float(height * width))
    wasted = grid_h * grid_w - effective
    return effective, wasted


def select_grid(
    height: int,
    width: int,
    base: int = DEFAULT_BASE,
    allowed=DEFAULT_ALLOWED,
    max_dim: int = MAX_GRID_DIM,
    max_tiles: int = MAX_TILES,
) -> AnyResGrid:
    """Pick the tile grid for an height x width image.

    Ranking: least wasted canvas fraction, most effective resolution,
    fewest tiles, rows <= cols, then lexicographic (rows, cols) so the
    choice is total and deterministic. Keying on the waste fraction
    first keeps the chosen fraction from growing when an image is
    uniformly upscaled: each grid's own fraction never increases as the
    image grows, so neither does the minimum.
    """
    if height < 1 or width < 1:
        raise ConfigError(f"bad image size {height}x{width}")
    allowed = tuple(allowed)
    if not allowed:
        raise ConfigError("allowed grid set is empty")

    best = None
    best_key = None
    for rows, cols in allowed:
        grid = AnyResGrid(rows=rows, cols=cols, base=base)
        grid.validate(max_dim=max_dim, max_tiles=max_tiles)
        effective, wasted = _fit_stats(height, width, rows * base, cols * base)
        canvas = rows * base * cols * base
        key = (wasted / canvas, -effective, rows * cols, rows > cols, (rows, cols))
        if best_key is None or key < best_key:
            best, best_key = grid, key
    return best


def wasted_fraction(height: int, width: int, grid: AnyResGrid) -> float:
    """Padding fraction of the grid canvas left unused by the fit."""
    _, wasted = _fit_stats(height, width, grid.rows * grid.base, grid.cols * grid.base)
    return wasted / (grid.rows * grid.base * grid.cols * grid.base)


def tile(image: np.ndarray, grid: AnyResGrid, fill: float = 0.5) -> list[np.ndarray]:
    """Slice an image into grid tiles plus a trailing global thumbnail.

    image: (C, H, W) float pixels. Returns rows*cols + 1 crops of
    (C, base, base); the thumbnail is always last.
    """
    if image.ndim != 3:
        raise ShapeError(f"expected (C, H, W) image, got {image.shape}")
    grid.validate()
    b = grid.base
    canvas = resize_and_pad(image, grid.rows * b, grid.cols * b, fill=fill)
    crops = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            crops.append(
                np.ascontiguousarray(canvas[:, r * b : (r + 1) * b, c * b : (c + 1) * b])
            )
    crops.append(resize_and_pad(image, b, b, fill=fill))
    return crops


def visual_token_count(grid: AnyResGrid, patch: int) -> int:
    """Patch tokens the encoder emits over all crops of this grid."""
    if patch < 1 or grid.base % patch != 0:
        raise ShapeError(f"base {grid.base} not divisible by patch {patch}")
    return grid.crops * (grid.base // patch) ** 2
