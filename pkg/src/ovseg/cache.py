"""Binary cache container used by all pipeline stages.

Layout (little-endian throughout):

    magic   4 bytes  b"OVSG"
    version u32
    meta    u64 length + JSON bytes (sorted keys, compact separators)
    count   u32 number of arrays
    per array, sorted by name:
        name  u32 length + utf-8 bytes
        dtype u32 length + numpy dtype string (e.g. "<f8")
        ndim  u32, then ndim x u64 shape
        data  u64 byte length + raw C-order bytes

Writing the same meta and arrays always produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import IoFailure, MissingFile, VersionMismatch

MAGIC = b"OVSG"
VERSION = 1


def write_cache(path: str | Path, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(struct.pack("<Q", len(meta_bytes)))
    chunks.append(meta_bytes)
    chunks.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        # Force explicit little-endian dtypes so files are portable.
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(dt, copy=False)
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", len(dtype_b)))
        chunks.append(dtype_b)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        raw = arr.tobytes()
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(b"".join(chunks))
        tmp.replace(path)
    except OSError as exc:
        raise IoFailure(f"failed writing cache {path}: {exc}") from exc


def read_cache(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise VersionMismatch(f"{path}: bad magic bytes (expected OVSG)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise VersionMismatch(f"{path}: cache version {version}, expected {VERSION}")
    off = 8
    (meta_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    meta = json.loads(data[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (n_arrays,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (dtype_len,) = struct.unpack_from("<I", data, off)
        off += 4
        dtype = np.dtype(data[off : off + dtype_len].decode("ascii"))
        off += dtype_len
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off) if ndim else ()
        off += 8 * ndim
        (nbytes,) = struct.unpack_from("<Q", data, off)
        off += 8
        arr = np.frombuffer(data[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
        arrays[name] = arr
    return meta, arrays
