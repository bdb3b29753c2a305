"""Image resampling used by the training pipeline and tiling.

Bilinear interpolation with half-pixel sample centers, the convention
where resizing a 2x2 checkerboard down to 1x1 yields the mean of the
four pixels and same-size resizing is the identity.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) float32 to (C, out_h, out_w)."""
    if image.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {image.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bad output size {out_h}x{out_w}")
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()

    sy = h / out_h
    sx = w / out_w
    # half-pixel centers, clamped at the borders
    ys = np.clip((np.arange(out_h) + 0.5) * sy - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * sx - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[None, :, None]
    wx = (xs - x0).astype(np.float32)[None, None, :]

    img = image.astype(np.float32)
    tl = img[:, y0[:, None], x0[None, :]]
    tr = img[:, y0[:, None], x1[None, :]]
    bl = img[:, y1[:, None], x0[None, :]]
    br = img[:, y1[:, None], x1[None, :]]
    top = tl * (1.0 - wx) + tr * wx
    bot = bl * (1.0 - wx) + br * wx
    return np.ascontiguousarray(top * (1.0 - wy) + bot * wy)


def hflip(image: np.ndarray) -> np.ndarray:
    """Mirror (C, H, W) left-right."""
    return np.ascontiguousarray(image[:, :, ::-1])


def resize_and_pad(image: np.ndarray, out_h: int, out_w: int, fill: float = 0.0) -> np.ndarray:
    """Fit (C, H, W) into out_h x out_w preserving aspect ratio, centered
    on a constant background."""
    c, h, w = image.shape
    scale = min(out_h / h, out_w / w)
    new_h = max(1, min(out_h, round(h * scale)))
    new_w = max(1, min(out_w, round(w * scale)))
    resized = resize_bilinear(image, new_h, new_w)
    canvas = np.full((c, out_h, out_w), fill, dtype=np.float32)
    top = (out_h - new_h) // 2
    left = (out_w - new_w) // 2
    canvas[:, top : top + new_h, left : left + new_w] = resized
    return canvas
