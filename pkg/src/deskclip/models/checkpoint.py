"""Single-file weight container.

Layout: magic ``DCKP``, u16 LE version, u32 LE header length, JSON
header, then raw tensor bytes back to back. The header carries an
arbitrary JSON meta dict plus a manifest of (name, shape, dtype) in
sorted name order, which is also the order of the data blobs. Sorted
names plus fixed little-endian encoding make byte output a pure function
of the contents.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..numerics import Tensor
from .layers import ParamStore

MAGIC = b"DCKP"
VERSION = 1

_DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def save_checkpoint(path, store: ParamStore, meta: dict | None = None) -> None:
    names = sorted(store)
    manifest = []
    for n in names:
        arr = store[n].data
        if arr.dtype not in _DTYPE_NAMES:
            raise DataError(f"tensor {n} has unsupported dtype {arr.dtype}")
        manifest.append({"name": n, "shape": list(arr.shape), "dtype": _DTYPE_NAMES[arr.dtype]})
    header = json.dumps(
        {"meta": meta or {}, "tensors": manifest}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for n in names:
            arr = np.ascontiguousarray(store[n].data)
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            f.write(arr.tobytes())


def load_checkpoint(path, requires_grad: bool = True) -> tuple[ParamStore, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a weight container (bad magic)")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 6)
    if 10 + hlen > len(raw):
        raise DataError(f"{path}: truncated header")
    try:
        header = json.loads(raw[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt header: {e}") from e
    store: ParamStore = {}
    offset = 10 + hlen
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"{path}: unknown dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        blob = raw[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise DataError(f"{path}: truncated data for tensor {entry['name']}")
        arr = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
        store[entry["name"]] = Tensor(arr, requires_grad=requires_grad)
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after tensor data")
    return store, header["meta"]
