"""Byte-level tokenizer.

Every UTF-8 byte is its own token (ids 0..255), followed by three
specials: pad 256, bos 257, eos 258. No merges, no vocabulary file,
nothing to train, and any string round-trips exactly.
"""

from __future__ import annotations

import numpy as np

PAD_ID = 256
BOS_ID = 257
EOS_ID = 258
VOCAB_SIZE = 259


def encode(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode(ids) -> str:
    data = bytes(int(i) for i in ids if int(i) < 256)
    return data.decode("utf-8", errors="replace")


def encode_padded(text: str, context: int, add_bos: bool = True, add_eos: bool = True) -> np.ndarray:
    """Fixed-length id row: [bos] bytes [eos] pad...

    Overlong text is truncated so eos still fits; eos survives
    truncation because downstream pooling reads the eos position.
    """
    ids = encode(text)
    specials = (1 if add_bos else 0) + (1 if add_eos else 0)
    budget = context - specials
    if budget < 0:
        raise ValueError(f"context {context} too small for special tokens")
    ids = ids[:budget]
    row = ([BOS_ID] if add_bos else []) + ids + ([EOS_ID] if add_eos else [])
    row = row + [PAD_ID] * (context - len(row))
    return np.asarray(row, dtype=np.int64)


def batch_encode(texts, context: int, add_bos: bool = True, add_eos: bool = True) -> np.ndarray:
    return np.stack([encode_padded(t, context, add_bos, add_eos) for t in texts])


def eos_positions(ids: np.ndarray) -> np.ndarray:
    """Index of the first eos in each row; rows are built so one exists."""
    hits = ids == EOS_ID
    if not hits.any(axis=-1).all():
        raise ValueError("row without eos token")
    return hits.argmax(axis=-1)
