"""Versioned little-endian container of named parameter arrays.

Layout::

    b"BNFCKPT\\0"  magic
    u32           format version
    u32           header length H
    H bytes       UTF-8 JSON header: {"meta": {...}, "arrays": [{"name", "shape", "dtype", "offset", "nbytes"}]}
    ...           raw little-endian array data
    u32           CRC32 of everything above
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"BNFCKPT\0"
VERSION = 1
_DTYPES = {"f4": "<f4", "f8": "<f8"}


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        code = "f8" if a.dtype == np.float64 else "f4"
        raw = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": code, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(arrays, meta)``; raises CheckpointError on any inconsistency."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 12 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack_from("<II", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(body[start : start + hlen])
        payload = body[start + hlen :]
        arrays = {}
        for e in header["arrays"]:
            raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
            a = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
            arrays[e["name"]] = a.astype(a.dtype.newbyteorder("="))
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed header or payload ({exc})") from exc
    return arrays, header.get("meta", {})
