"""Absolute trajectory error and matching-precision benchmarks."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset_tum import associate, relative_pose
from .descriptor_matching import match_nn
from .errors import InsufficientOverlapError
from .geometry import CameraIntrinsics, Se3Pose, rigid_align, warp_points


@dataclass
class AteResult:
    rmse_m: float
    errors: np.ndarray  # per associated pose, meters
    stamps: np.ndarray  # estimate timestamps of the associated poses
    alignment: Se3Pose  # maps estimated positions onto ground truth


def _positions(poses) -> np.ndarray:
    return np.array([p.translation for p in poses], dtype=np.float64).reshape(-1, 3)


def ate_rmse(est_stamps, est_poses, gt_stamps, gt_poses, max_dt: float = 0.02) -> AteResult:
    """RMSE of translational residuals after rigid (scale-free) alignment of est onto gt."""
    pairs = associate(est_stamps, gt_stamps, max_dt)
    if len(pairs) < 2:
        raise InsufficientOverlapError(f"only {len(pairs)} timestamp associations within {max_dt}s")
    i, j = np.array(pairs).T
    pe = _positions(est_poses)[i]
    pg = _positions(gt_poses)[j]
    # straight-line trajectories leave one rotation axis free; any minimiser will do
    align = rigid_align(pe, pg, allow_degenerate=True)
    err = np.linalg.norm(align.apply(pe) - pg, axis=1)
    return AteResult(float(np.sqrt(np.mean(err**2))), err, np.asarray(est_stamps, dtype=np.float64)[i], align)


def write_ate_csv(path, result: AteResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "error_m"])
        for ts, e in zip(result.stamps, result.errors):
            w.writerow([f"{ts:.6f}", repr(float(e))])
        w.writerow(["rmse", repr(result.rmse_m)])


@dataclass
class MatchingResult:
    precision: float  # correct / matched
    density: float  # matched / keypoints in A
    n_matched: int
    n_correct: int
    n_keypoints: int


def matching_benchmark(pairs, extractor, k: CameraIntrinsics, px_tol: float = 4.0, max_hamming: int = 256,
                       cross_check: bool = True) -> MatchingResult:
    """Match A->B with the extractor's descriptors and score against the ground-truth warp.

    A match counts as correct when the matched B keypoint lies within
    ``px_tol`` pixels (Euclidean) of the warped A keypoint. Matches whose A
    keypoint has no valid depth cannot be scored and are left out.
    """
    matched = correct = kps = 0
    for a, b in pairs:
        rel = relative_pose(a, b)
        fa, fb = extractor(a.gray), extractor(b.gray)
        kps += len(fa)
        if len(fa) == 0 or len(fb) == 0:
            continue
        matches = match_nn(fa.descriptors, fb.descriptors, max_hamming, cross_check)
        if not matches:
            continue
        ia = np.array([m.index_a for m in matches])
        ib = np.array([m.index_b for m in matches])
        r = np.rint(fa.uv[ia]).astype(np.intp)
        z = a.depth[r[:, 1], r[:, 0]]
        uv_w, _, ok = warp_points(fa.uv[ia], z, rel.rotation, rel.translation, k)
        err = np.linalg.norm(np.where(ok[:, None], uv_w, 0.0) - fb.uv[ib], axis=1)
        matched += int(ok.sum())
        correct += int((ok & (err <= px_tol)).sum())
    return MatchingResult(correct / matched if matched else 0.0, matched / kps if kps else 0.0, matched, correct, kps)
