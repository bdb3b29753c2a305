"""Byte-level tokenizer round trips and padding layout."""

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from deskclip.models import tokenizer as tok


def test_vocab_layout():
    assert tok.VOCAB_SIZE == 259
    assert (tok.PAD_ID, tok.BOS_ID, tok.EOS_ID) == (256, 257, 258)


def test_ascii_round_trip():
    s = "a red square and a blue disk"
    assert tok.decode(tok.encode(s)) == s


@given(st.text(max_size=60))
def test_any_text_round_trips(s):
    assert tok.decode(tok.encode(s)) == s


def test_padded_layout():
    row = tok.encode_padded("hi", 8)
    np.testing.assert_array_equal(
        row, [tok.BOS_ID, ord("h"), ord("i"), tok.EOS_ID] + [tok.PAD_ID] * 4
    )


def test_truncation_keeps_eos():
    row = tok.encode_padded("abcdefgh", 5)
    assert row[-1] == tok.EOS_ID
    assert row[0] == tok.BOS_ID
    assert len(row) == 5


def test_batch_encode_rectangular():
    ids = tok.batch_encode(["a", "longer caption"], 16)
    assert ids.shape == (2, 16)
    pos = tok.eos_positions(ids)
    assert ids[0, pos[0]] == tok.EOS_ID
    assert ids[1, pos[1]] == tok.EOS_ID
    assert pos[1] > pos[0]


def test_multibyte_utf8_survives():
    s = "café"
    assert tok.decode(tok.encode(s)) == s
    assert len(tok.encode(s)) == 5  # e-acute is two bytes
