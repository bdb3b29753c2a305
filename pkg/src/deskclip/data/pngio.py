"""PNG encode/decode for dataset records.

Encoding is written out by hand (single IDAT, filter 0 on every
scanline, fixed zlib level) so the same pixel array always produces the
same bytes, which the dataset generator's determinism contract relies
on. Decoding goes through Pillow so imported third-party images with
palettes, alpha, or exotic bit depths still load.
"""

from __future__ import annotations

import io
import struct
import zlib

import numpy as np
from PIL import Image

from ..errors import DataError

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(kind: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + kind
        + payload
        + struct.pack(">I", zlib.crc32(kind + payload) & 0xFFFFFFFF)
    )


def encode_png(pixels: np.ndarray) -> bytes:
    """(H, W, 3) uint8 to RGB8 PNG bytes, deterministically."""
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise DataError(f"encode_png expects (H, W, 3) uint8, got {pixels.shape} {pixels.dtype}")
    h, w = pixels.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    rows = np.ascontiguousarray(pixels)
    raw = b"".join(b"\x00" + rows[y].tobytes() for y in range(h))
    idat = zlib.compress(raw, 9)
    return _SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def decode_png(data: bytes) -> np.ndarray:
    """PNG bytes to (H, W, 3) uint8, converting other modes to RGB."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as e:
        raise DataError(f"undecodable image: {e}") from e


def to_unit_float(pixels: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 to (3, H, W) float32 in [0, 1]."""
    return np.ascontiguousarray(pixels.transpose(2, 0, 1).astype(np.float32) / 255.0)
