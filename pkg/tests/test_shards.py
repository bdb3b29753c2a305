"""Shard container: round trips, ordering, and corruption detection."""

import struct

import numpy as np
import pytest

from deskclip.data.shards import (
    MAGIC,
    ShardRecord,
    iter_shard,
    read_shard,
    shard_record_count,
    write_shard,
)
from deskclip.errors import ChecksumError, DataError, ShardFormatError


def make_record(i, png=b"\x89PNG fake"):
    return ShardRecord(
        record_id=i,
        png=png + bytes([i % 256]),
        caption_original=f"a shape {i}",
        caption_synthetic=f"a light background with item {i}",
        meta={"index": i},
    )


class TestRoundTrip:
    def test_single_record_byte_identical(self, tmp_path):
        rec = make_record(7)
        p = tmp_path / "one.shard"
        write_shard(p, [rec])
        back = read_shard(p)
        assert len(back) == 1
        got = back[0]
        assert got.record_id == rec.record_id
        assert got.png == rec.png
        assert got.caption_original == rec.caption_original
        assert got.caption_synthetic == rec.caption_synthetic
        assert got.meta == rec.meta
        assert got.encode() == rec.encode()

    def test_order_preserved(self, tmp_path):
        recs = [make_record(i) for i in range(50)]
        p = tmp_path / "many.shard"
        assert write_shard(p, recs) == 50
        back = read_shard(p)
        assert [r.record_id for r in back] == list(range(50))

    def test_write_is_deterministic(self, tmp_path):
        recs = [make_record(i) for i in range(10)]
        a, b = tmp_path / "a.shard", tmp_path / "b.shard"
        write_shard(a, recs)
        write_shard(b, recs)
        assert a.read_bytes() == b.read_bytes()

    def test_record_count_without_full_read(self, tmp_path):
        p = tmp_path / "c.shard"
        write_shard(p, [make_record(i) for i in range(17)])
        assert shard_record_count(p) == 17

    def test_iter_is_streaming(self, tmp_path):
        p = tmp_path / "s.shard"
        write_shard(p, [make_record(i) for i in range(5)])
        it = iter_shard(p)
        first = next(it)
        assert first.record_id == 0
        rest = list(it)
        assert len(rest) == 4

    def test_empty_write_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_shard(tmp_path / "e.shard", [])

    def test_unicode_captions(self, tmp_path):
        rec = ShardRecord(1, b"png", "café", "über light", {})
        p = tmp_path / "u.shard"
        write_shard(p, [rec])
        got = read_shard(p)[0]
        assert got.caption_original == "café"
        assert got.caption_synthetic == "über light"


class TestCorruption:
    def test_empty_file_bad_magic(self, tmp_path):
        p = tmp_path / "empty.shard"
        p.write_bytes(b"")
        with pytest.raises(ShardFormatError):
            list(iter_shard(p))

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "m.shard"
        write_shard(p, [make_record(0)])
        raw = bytearray(p.read_bytes())
        raw[:4] = b"XXXX"
        p.write_bytes(bytes(raw))
        with pytest.raises(ShardFormatError):
            list(iter_shard(p))

    def test_body_bit_flip_caught(self, tmp_path):
        p = tmp_path / "b.shard"
        write_shard(p, [make_record(i) for i in range(3)])
        raw = bytearray(p.read_bytes())
        mid = len(raw) // 2
        raw[mid] ^= 0x10
        p.write_bytes(bytes(raw))
        with pytest.raises((ChecksumError, ShardFormatError)):
            list(iter_shard(p))

    def test_trailer_bit_flip_caught(self, tmp_path):
        p = tmp_path / "t.shard"
        write_shard(p, [make_record(0)])
        raw = bytearray(p.read_bytes())
        raw[-1] ^= 0x01
        p.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError):
            list(iter_shard(p))

    def test_truncation_caught(self, tmp_path):
        p = tmp_path / "tr.shard"
        write_shard(p, [make_record(i) for i in range(3)])
        raw = p.read_bytes()
        p.write_bytes(raw[:-6])
        with pytest.raises(ShardFormatError):
            list(iter_shard(p))

    def test_small_corruption_fuzz(self, tmp_path):
        # flip one random bit per trial anywhere in the file; every
        # corruption must raise (magic region included)
        recs = [make_record(i) for i in range(4)]
        p = tmp_path / "fz.shard"
        write_shard(p, recs)
        good = p.read_bytes()
        rng = np.random.default_rng(0)
        caught = 0
        trials = 60
        for _ in range(trials):
            raw = bytearray(good)
            bit = int(rng.integers(0, len(raw) * 8))
            raw[bit // 8] ^= 1 << (bit % 8)
            p.write_bytes(bytes(raw))
            try:
                list(iter_shard(p))
            except (ShardFormatError, ChecksumError, DataError):
                caught += 1
        assert caught >= trials - 1


class TestRecordEncoding:
    def test_stray_bytes_rejected(self):
        payload = make_record(3).encode()[4:] + b"xx"
        with pytest.raises(ShardFormatError):
            ShardRecord.decode(payload)

    def test_truncated_field_rejected(self):
        payload = make_record(3).encode()[4:]
        with pytest.raises(ShardFormatError):
            ShardRecord.decode(payload[:-3])

    def test_bad_meta_json_rejected(self):
        rec = make_record(1)
        raw = rec.encode()[4:]
        bad = raw.replace(b'{"index":1}', b'{"index":!}')
        with pytest.raises(ShardFormatError):
            ShardRecord.decode(bad)
