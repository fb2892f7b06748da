"""256-bit binary descriptors: packing, Hamming distance, unit-sphere mapping,
exhaustive nearest-neighbour matching and a BRIEF-style baseline.

A descriptor is a ``uint8`` array of 32 bytes; bit ``i`` lives in byte
``i // 8`` at position ``i % 8`` (little bit order) and is set iff the
feature value ``f_i >= 0``. Descriptor sets are ``(N, 32)`` arrays.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import BoundsError, IngestionError, ShapeError

NBITS = 256
NBYTES = NBITS // 8


class Match(NamedTuple):
    index_a: int
    index_b: int
    hamming_distance: int


def binarize(f) -> np.ndarray:
    f = np.asarray(f)
    if f.shape[-1] != NBITS:
        raise ShapeError(f"expected {NBITS}-dim features, got shape {f.shape}")
    return np.packbits(f >= 0, axis=-1, bitorder="little")


def unpack(d) -> np.ndarray:
    return np.unpackbits(np.asarray(d, dtype=np.uint8), axis=-1, bitorder="little").astype(bool)


def hamming(a, b):
    """Popcount of XOR; broadcasts over leading dims."""
    x = np.bitwise_xor(np.asarray(a, dtype=np.uint8), np.asarray(b, dtype=np.uint8))
    out = np.bitwise_count(x).sum(axis=-1, dtype=np.int64)
    return int(out) if out.ndim == 0 else out


def _as_words(d: np.ndarray) -> np.ndarray:
    d = np.ascontiguousarray(d, dtype=np.uint8).reshape(-1, NBYTES)
    return d.view(np.uint64)


def hamming_matrix(descs_a, descs_b, block: int = 512) -> np.ndarray:
    """All-pairs Hamming distances, computed in query blocks over 64-bit words."""
    wa, wb = _as_words(descs_a), _as_words(descs_b)
    out = np.empty((len(wa), len(wb)), dtype=np.int32)
    for s in range(0, len(wa), block):
        x = np.bitwise_xor(wa[s : s + block, None, :], wb[None, :, :])
        out[s : s + block] = np.bitwise_count(x).sum(axis=-1, dtype=np.int32)
    return out


def to_unit_sphere(d) -> np.ndarray:
    """Bits -> +-1/16 entries: unit norm, and squared L2 distance = hamming / 64."""
    return np.where(unpack(d), 1.0, -1.0) / np.sqrt(NBITS)


def match_nn(descs_a, descs_b, max_hamming: int = 64, cross_check: bool = True) -> list[Match]:
    """Exhaustive nearest neighbour in Hamming space; ties go to the lowest index."""
    descs_a = np.asarray(descs_a, dtype=np.uint8).reshape(-1, NBYTES)
    descs_b = np.asarray(descs_b, dtype=np.uint8).reshape(-1, NBYTES)
    if len(descs_a) == 0 or len(descs_b) == 0:
        return []
    dist = hamming_matrix(descs_a, descs_b)
    best_b = np.argmin(dist, axis=1)
    best_d = dist[np.arange(len(descs_a)), best_b]
    keep = best_d <= max_hamming
    if cross_check:
        best_a = np.argmin(dist, axis=0)
        keep &= best_a[best_b] == np.arange(len(descs_a))
    return [Match(int(i), int(best_b[i]), int(best_d[i])) for i in np.flatnonzero(keep)]


# --------------------------------------------------------------- BRIEF baseline

PATCH = 32
_HALF = PATCH // 2


def make_brief_pattern(seed: int = 0) -> np.ndarray:
    """256 comparison pairs ``(du_p, dv_p, du_q, dv_q)``, isotropic Gaussian, sigma = S/5."""
    rng = np.random.default_rng(seed)
    pts = np.rint(rng.normal(0.0, PATCH / 5.0, size=(NBITS, 4)))
    return np.clip(pts, -(_HALF - 1), _HALF - 1).astype(np.intp)


def smooth_for_brief(gray) -> np.ndarray:
    return gaussian_filter(np.asarray(gray, dtype=np.float64), sigma=2.0, mode="nearest")


def brief_describe(smoothed: np.ndarray, uv, pattern: np.ndarray) -> np.ndarray:
    """Describe integer keypoints on a pre-smoothed image; returns (N, 32)."""
    uv = np.rint(np.asarray(uv, dtype=np.float64).reshape(-1, 2)).astype(np.intp)
    h, w = smoothed.shape
    u, v = uv[:, 0], uv[:, 1]
    bad = (u < _HALF) | (v < _HALF) | (u > w - _HALF - 1) | (v > h - _HALF - 1)
    if np.any(bad):
        raise BoundsError(f"keypoint {uv[bad][0].tolist()} has no full {PATCH}x{PATCH} patch in {w}x{h} image")
    ip = smoothed[v[:, None] + pattern[None, :, 1], u[:, None] + pattern[None, :, 0]]
    iq = smoothed[v[:, None] + pattern[None, :, 3], u[:, None] + pattern[None, :, 2]]
    return np.packbits(ip < iq, axis=-1, bitorder="little")


def brief_baseline(gray, kp, pattern: np.ndarray) -> np.ndarray:
    pos = getattr(kp, "position", kp)
    return brief_describe(smooth_for_brief(gray), [tuple(pos)], pattern)[0]


def brief_margin_ok(uv, width: int, height: int) -> np.ndarray:
    uv = np.rint(np.asarray(uv, dtype=np.float64).reshape(-1, 2))
    return (uv[:, 0] >= _HALF) & (uv[:, 1] >= _HALF) & (uv[:, 0] <= width - _HALF - 1) & (uv[:, 1] <= height - _HALF - 1)


# ------------------------------------------------------------- descriptor dump

DUMP_MAGIC = b"BNFDESC\0"
DUMP_VERSION = 1
_RECORD = struct.Struct("<fff32s")


def write_descriptor_dump(path, uv, confidence, descs) -> None:
    """Binary records ``(u, v, confidence, 32 descriptor bytes)`` after a versioned header."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    descs = np.asarray(descs, dtype=np.uint8).reshape(-1, NBYTES)
    conf = np.asarray(confidence, dtype=np.float64).reshape(-1)
    parts = [DUMP_MAGIC, struct.pack("<II", DUMP_VERSION, len(uv))]
    parts += [_RECORD.pack(u, v, c, d.tobytes()) for (u, v), c, d in zip(uv, conf, descs)]
    Path(path).write_bytes(b"".join(parts))


def read_descriptor_dump(path):
    """Returns ``(uv float32 (N,2), confidence (N,), descs uint8 (N,32))``."""
    data = Path(path).read_bytes()
    if not data.startswith(DUMP_MAGIC):
        raise IngestionError(f"{path}: not a descriptor dump")
    version, n = struct.unpack_from("<II", data, len(DUMP_MAGIC))
    if version != DUMP_VERSION or len(data) != len(DUMP_MAGIC) + 8 + n * _RECORD.size:
        raise IngestionError(f"{path}: unsupported version or truncated dump")
    rec = np.frombuffer(data, dtype=np.dtype([("u", "<f4"), ("v", "<f4"), ("c", "<f4"), ("d", "u1", (32,))]),
                        offset=len(DUMP_MAGIC) + 8, count=n)
    return np.stack([rec["u"], rec["v"]], axis=1), rec["c"].copy(), rec["d"].copy()
