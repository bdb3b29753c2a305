"""Shard container for training records.

One shard file holds length-prefixed records behind a small header and
in front of a CRC-32 trailer:

  magic "OVSH" | version u16 LE | record count u64 LE | records | crc u32 LE

Each record is a u32 LE byte length followed by: record id u64 LE, then
four length-prefixed fields (u32 LE each): PNG bytes, original caption
UTF-8, synthetic caption UTF-8, meta JSON UTF-8. The CRC covers every
byte after the 6-byte magic+version prefix and before the trailer, so
any single-bit flip in the body is caught. Readers stream records in
O(1) memory; the checksum verdict lands when the iterator is exhausted.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from ..errors import ChecksumError, DataError, ShardFormatError

MAGIC = b"OVSH"
VERSION = 1
_COPY_CHUNK = 1 << 20


@dataclass
class ShardRecord:
    record_id: int
    png: bytes
    caption_original: str
    caption_synthetic: str
    meta: dict = field(default_factory=dict)

    def encode(self) -> bytes:
        parts = [struct.pack("<Q", self.record_id)]
        for blob in (
            self.png,
            self.caption_original.encode("utf-8"),
            self.caption_synthetic.encode("utf-8"),
            json.dumps(self.meta, sort_keys=True, separators=(",", ":")).encode("utf-8"),
        ):
            parts.append(struct.pack("<I", len(blob)))
            parts.append(blob)
        payload = b"".join(parts)
        return struct.pack("<I", len(payload)) + payload

    @staticmethod
    def decode(payload: bytes) -> "ShardRecord":
        if len(payload) < 8:
            raise ShardFormatError("record payload shorter than its id field")
        (record_id,) = struct.unpack_from("<Q", payload, 0)
        offset = 8
        fields: list[bytes] = []
        for which in ("image", "original caption", "synthetic caption", "meta"):
            if offset + 4 > len(payload):
                raise ShardFormatError(f"record {record_id}: truncated before {which} length")
            (n,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            if offset + n > len(payload):
                raise ShardFormatError(f"record {record_id}: {which} overruns record payload")
            fields.append(payload[offset : offset + n])
            offset += n
        if offset != len(payload):
            raise ShardFormatError(f"record {record_id}: {len(payload) - offset} stray bytes")
        try:
            meta = json.loads(fields[3].decode("utf-8")) if fields[3] else {}
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ShardFormatError(f"record {record_id}: bad meta JSON: {e}") from e
        return ShardRecord(
            record_id=record_id,
            png=fields[0],
            caption_original=fields[1].decode("utf-8", errors="replace"),
            caption_synthetic=fields[2].decode("utf-8", errors="replace"),
            meta=meta,
        )


def write_shard(path, records: Iterable[ShardRecord]) -> int:
    """Write records to a shard file; returns the record count.

    Streams through a sibling temp file because the count lives in the
    checksummed region before the records, so the final CRC can only be
    rolled up once the count is known.
    """
    path = Path(path)
    count = 0
    tmp = tempfile.NamedTemporaryFile(dir=path.parent, delete=False)
    try:
        with tmp:
            for rec in records:
                tmp.write(rec.encode())
                count += 1
        if count == 0:
            raise DataError("refusing to write an empty shard")
        counted = struct.pack("<Q", count)
        crc = zlib.crc32(counted)
        with open(path, "wb") as out:
            out.write(MAGIC)
            out.write(struct.pack("<H", VERSION))
            out.write(counted)
            with open(tmp.name, "rb") as body:
                while True:
                    chunk = body.read(_COPY_CHUNK)
                    if not chunk:
                        break
                    crc = zlib.crc32(chunk, crc)
                    out.write(chunk)
            out.write(struct.pack("<I", crc & 0xFFFFFFFF))
    finally:
        os.unlink(tmp.name)
    return count


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ShardFormatError(f"unexpected end of shard while reading {what}")
    return data


def iter_shard(path) -> Iterator[ShardRecord]:
    """Stream records from a shard, verifying the trailer checksum after
    the last record. Holds one record in memory at a time."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ShardFormatError(f"{path}: not a shard file (magic {magic!r})")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise ShardFormatError(f"{path}: unsupported shard version {version}")
        counted = _read_exact(f, 8, "record count")
        (count,) = struct.unpack("<Q", counted)
        crc = zlib.crc32(counted)
        for i in range(count):
            raw_len = _read_exact(f, 4, f"record {i} length")
            crc = zlib.crc32(raw_len, crc)
            (n,) = struct.unpack("<I", raw_len)
            payload = _read_exact(f, n, f"record {i} payload")
            crc = zlib.crc32(payload, crc)
            yield ShardRecord.decode(payload)
        trailer = _read_exact(f, 4, "checksum trailer")
        (stored,) = struct.unpack("<I", trailer)
        if stored != (crc & 0xFFFFFFFF):
            raise ChecksumError(
                f"{path}: checksum mismatch (stored {stored:#010x}, computed {crc & 0xFFFFFFFF:#010x})"
            )
        if f.read(1):
            raise ShardFormatError(f"{path}: trailing bytes after checksum")


def read_shard(path) -> list[ShardRecord]:
    """Load a whole shard, checksum verified."""
    return list(iter_shard(path))


def shard_record_count(path) -> int:
    """Record count from the header alone; does not verify the body."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ShardFormatError(f"{path}: not a shard file")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise ShardFormatError(f"{path}: unsupported shard version {version}")
        (count,) = struct.unpack("<Q", _read_exact(f, 8, "record count"))
        return count
