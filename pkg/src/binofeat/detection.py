"""Shi-Tomasi supervision targets and probability-map keypoint extraction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .geometry import CameraIntrinsics, PixelCoord, Se3Pose, warp_points

TARGET_CELL = 16


@dataclass(frozen=True)
class Keypoint:
    position: PixelCoord
    confidence: float
    angle: float = 0.0  # orientation is not estimated
    octave: int = 0  # single scale


@dataclass
class DetectionTarget:
    mask_a: np.ndarray  # (H, W) uint8, 1 = keypoint
    mask_b: np.ndarray  # warped positives in the second frame
    uv_a: np.ndarray  # (M, 2) integer positives of A that survived the warp
    uv_b: np.ndarray  # (M, 2) continuous warped positions in B


def shi_tomasi_response(gray) -> np.ndarray:
    """Min eigenvalue of the 3x3-window structure tensor of central-difference gradients.

    The two-pixel border, where the window reaches undefined gradients, is 0.
    """
    img = np.asarray(gray, dtype=np.float64)
    h, w = img.shape
    resp = np.zeros((h, w))
    if h < 5 or w < 5:
        return resp
    ix = np.zeros_like(img)
    iy = np.zeros_like(img)
    ix[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2.0
    iy[1:-1, :] = (img[2:, :] - img[:-2, :]) / 2.0
    # 3x3 sums (uniform_filter is a mean)
    sxx = uniform_filter(ix * ix, size=3, mode="constant") * 9.0
    syy = uniform_filter(iy * iy, size=3, mode="constant") * 9.0
    sxy = uniform_filter(ix * iy, size=3, mode="constant") * 9.0
    half_tr = 0.5 * (sxx + syy)
    lam = half_tr - np.sqrt(0.25 * (sxx - syy) ** 2 + sxy * sxy)
    resp[2:-2, 2:-2] = np.maximum(lam[2:-2, 2:-2], 0.0)
    return resp


def cell_maxima(score: np.ndarray, cell: int):
    """Per-cell argmax (first in row-major order on ties).

    Returns ``(rows, cols, values)`` with one entry per cell; partial cells at
    the right/bottom edge are included.
    """
    score = np.asarray(score, dtype=np.float64)
    h, w = score.shape
    hc, wc = -(-h // cell), -(-w // cell)
    padded = np.full((hc * cell, wc * cell), -np.inf)
    padded[:h, :w] = score
    blocks = padded.reshape(hc, cell, wc, cell).transpose(0, 2, 1, 3).reshape(hc, wc, cell * cell)
    arg = blocks.argmax(axis=2)
    vals = np.take_along_axis(blocks, arg[..., None], axis=2)[..., 0]
    rows = np.arange(hc)[:, None] * cell + arg // cell
    cols = np.arange(wc)[None, :] * cell + arg % cell
    return rows.ravel(), cols.ravel(), vals.ravel()


def visible_mask(uv_b, z_b, depth_b, occlusion_tol: float) -> np.ndarray:
    """In-bounds (after rounding) and not occluded by a valid depth reading in B."""
    h, w = depth_b.shape
    ok = np.all(np.isfinite(uv_b), axis=-1)
    r = np.rint(np.where(ok[:, None], uv_b, 0)).astype(np.intp)
    ok &= (r[:, 0] >= 0) & (r[:, 0] < w) & (r[:, 1] >= 0) & (r[:, 1] < h)
    db = np.zeros(len(uv_b))
    db[ok] = depth_b[r[ok, 1], r[ok, 0]]
    occluded = (db > 0) & (np.abs(z_b - db) > occlusion_tol * z_b)
    return ok & ~occluded


def make_targets(a, b, rel_pose: Se3Pose, k: CameraIntrinsics, response_floor: float = 1e-4,
                 occlusion_tol: float = 0.05) -> DetectionTarget:
    """Per 16x16 cell, the strongest Shi-Tomasi pixel of A above the floor, warped into B.

    Warped positives that are out of bounds, occluded, or land in a B cell
    already taken by a stronger positive are dropped from B.
    """
    h, w = a.gray.shape
    resp = shi_tomasi_response(a.gray)
    rows, cols, vals = cell_maxima(resp, TARGET_CELL)
    keep = vals > response_floor
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    mask_a = np.zeros((h, w), np.uint8)
    mask_a[rows, cols] = 1

    uv_a = np.stack([cols, rows], axis=1).astype(np.float64)
    depth = a.depth[rows, cols]
    uv_b, z_b, ok = warp_points(uv_a, depth, rel_pose.rotation, rel_pose.translation, k)
    ok &= visible_mask(uv_b, z_b, b.depth, occlusion_tol)
    inside = np.zeros(len(ok), bool)
    inside[ok] = np.all((uv_b[ok] >= 0) & (uv_b[ok] <= [w - 1, h - 1]), axis=1)
    ok &= inside

    mask_b = np.zeros((h, w), np.uint8)
    taken = set()
    kept = []
    for i in np.lexsort((np.arange(len(vals)), -vals)):
        if not ok[i]:
            continue
        cu, cv = np.rint(uv_b[i]).astype(int)
        cell = (cv // TARGET_CELL, cu // TARGET_CELL)
        if cell in taken:
            continue
        taken.add(cell)
        mask_b[cv, cu] = 1
        kept.append(i)
    kept = np.sort(np.asarray(kept, dtype=np.intp))
    return DetectionTarget(mask_a, mask_b, uv_a[kept], uv_b[kept])


def extract_keypoint_arrays(prob_map, threshold: float = 0.3, nms_grid: int = 8, max_kp: int = 1000):
    """Array form of :func:`extract_keypoints`: ``(uv (N,2) float, confidence (N,))``."""
    p = np.asarray(prob_map, dtype=np.float64)
    if p.ndim == 3:
        p = p[0]
    rows, cols, vals = cell_maxima(p, nms_grid)
    keep = vals > threshold
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    order = np.lexsort((cols, rows, -vals))[:max_kp]
    uv = np.stack([cols[order], rows[order]], axis=1).astype(np.float64)
    return uv, vals[order]


def extract_keypoints(prob_map, threshold: float = 0.3, nms_grid: int = 8, max_kp: int = 1000) -> list[Keypoint]:
    """Grid NMS: the maximum of each ``nms_grid`` cell, if above ``threshold``.

    Sorted by confidence, ties by (row, col), truncated to ``max_kp``.
    """
    uv, conf = extract_keypoint_arrays(prob_map, threshold, nms_grid, max_kp)
    return [Keypoint(PixelCoord(float(u), float(v)), float(c)) for (u, v), c in zip(uv, conf)]


def write_keypoints(path, uv, confidence) -> None:
    lines = [f"{u:.2f} {v:.2f} {c:.6f}" for (u, v), c in zip(np.asarray(uv).reshape(-1, 2), confidence)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_keypoints(path):
    text = Path(path).read_text()
    if not text.strip():
        return np.zeros((0, 2)), np.zeros(0)
    data = np.loadtxt(text.splitlines(), ndmin=2)
    return data[:, :2], data[:, 2]
