"""Slow, literal reference implementations used to cross-check the package.

Nothing here imports the algorithms under test; only plain numpy/python.
"""

from __future__ import annotations

import numpy as np


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


def naive_conv2d(x, w, b, stride, pad):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((cin, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((cout, oh, ow))
    for o in range(cout):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[o, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


def bit_hamming(a: bytes, b: bytes) -> int:
    n = 0
    for x, y in zip(bytes(a), bytes(b)):
        for bit in range(8):
            n += ((x >> bit) & 1) != ((y >> bit) & 1)
    return n


def fast_bit_hamming(a, b) -> int:
    return bin(int.from_bytes(bytes(a), "little") ^ int.from_bytes(bytes(b), "little")).count("1")


def sign_bits(f) -> list[int]:
    """Per element: 1 when f >= 0 else 0."""
    return [1 if v >= 0 else 0 for v in np.asarray(f).ravel()]


def mine_negative_literal(anchor: bytes, cands: list[bytes], cand_uv, x_gt, c, k):
    """Scan the k nearest candidates in order (ties by index); first one outside the window wins."""
    dists = [(fast_bit_hamming(anchor, d), j) for j, d in enumerate(cands)]
    dists.sort()
    nearest = [j for _, j in dists[:k]]
    for j in nearest:
        u, v = cand_uv[j]
        if abs(u - x_gt[0]) > c[0] or abs(v - x_gt[1]) > c[1]:
            return j
    return None


def nms_literal(score, cell, threshold, max_kp):
    """Per-cell maximum (first in row-major order), kept if > threshold; sorted by value then (row, col)."""
    h, w = score.shape
    found = []
    for r0 in range(0, h, cell):
        for c0 in range(0, w, cell):
            best = None
            for r in range(r0, min(r0 + cell, h)):
                for c in range(c0, min(c0 + cell, w)):
                    if best is None or score[r, c] > best[0]:
                        best = (score[r, c], r, c)
            if best[0] > threshold:
                found.append(best)
    found.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [(c, r, v) for v, r, c in found[:max_kp]]


def shi_tomasi_at(img, r, c) -> float:
    """Smallest eigenvalue of the 2x2 structure tensor summed over the 3x3 window at (r, c)."""
    m = np.zeros((2, 2))
    for i in range(r - 1, r + 2):
        for j in range(c - 1, c + 2):
            gx = (img[i, j + 1] - img[i, j - 1]) / 2.0
            gy = (img[i + 1, j] - img[i - 1, j]) / 2.0
            m += np.array([[gx * gx, gx * gy], [gx * gy, gy * gy]])
    return float(np.linalg.eigvalsh(m)[0])


def pinhole(p3, fx, fy, cx, cy):
    x, y, z = p3
    return fx * x / z + cx, fy * y / z + cy


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = rng.uniform(-max_angle, max_angle)
    kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(ang) * kx + (1 - np.cos(ang)) * kx @ kx
