"""RGB-D frame-to-keyframe tracking with 3D-3D RANSAC."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptor_matching import match_nn
from .errors import DegenerateConfigurationError, TrackingFailure
from .geometry import CameraIntrinsics, Se3Pose, backproject, rigid_align

log = logging.getLogger(__name__)


@dataclass
class TrackerConfig:
    inlier_tol: float = 0.05  # meters
    min_inliers: int = 20
    kf_inlier_floor: int = 50
    kf_match_floor: float = 0.25  # matches / keyframe keypoints
    ransac_confidence: float = 0.999
    max_iters: int = 1000
    max_hamming: int = 64
    cross_check: bool = True
    reset_on_loss: bool = True
    seed: int = 0


def estimate_motion(src, dst, cfg: TrackerConfig | None = None, rng: np.random.Generator | None = None):
    """RANSAC over 3-point rigid fits: returns ``(T, inlier_idx)`` with ``T @ src ~ dst``.

    The iteration cap adapts to the best inlier ratio so far; the final
    model is refit on all inliers.
    """
    cfg = cfg or TrackerConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    n = len(src)
    need = max(cfg.min_inliers, 3)
    if n < need:
        raise TrackingFailure(f"{n} correspondences, need at least {need}")

    best = np.zeros(n, dtype=bool)
    limit, it = cfg.max_iters, 0
    while it < limit:
        it += 1
        idx = rng.choice(n, 3, replace=False)
        try:
            t = rigid_align(src[idx], dst[idx])
        except DegenerateConfigurationError:
            continue
        inl = np.linalg.norm(t.apply(src) - dst, axis=1) < cfg.inlier_tol
        if inl.sum() > best.sum():
            best = inl
            w = inl.sum() / n
            if w >= 1.0:
                break
            k = math.log(1 - cfg.ransac_confidence) / math.log(1 - w**3)
            limit = min(cfg.max_iters, math.ceil(k))
    if best.sum() < need:
        raise TrackingFailure(f"best model has {int(best.sum())} inliers, need {need}")

    for _ in range(3):
        t = rigid_align(src[best], dst[best])
        inl = np.linalg.norm(t.apply(src) - dst, axis=1) < cfg.inlier_tol
        if inl.sum() < need:
            break
        if np.array_equal(inl, best):
            break
        best = inl
    return rigid_align(src[best], dst[best]), np.flatnonzero(best)


@dataclass
class Keyframe:
    frame: object
    uv: np.ndarray
    descriptors: np.ndarray
    points: np.ndarray  # (N, 3) camera-frame points, index-aligned with uv/descriptors
    pose: Se3Pose  # camera-to-world


@dataclass
class Trajectory:
    stamps: list = field(default_factory=list)
    poses: list = field(default_factory=list)  # camera-to-world
    lost: list = field(default_factory=list)

    def append(self, ts: float, pose: Se3Pose, lost: bool = False):
        if self.stamps and ts <= self.stamps[-1]:
            raise ValueError(f"timestamps must increase: {ts} after {self.stamps[-1]}")
        self.stamps.append(ts)
        self.poses.append(pose)
        self.lost.append(lost)

    def __len__(self):
        return len(self.stamps)


@dataclass
class FrameStats:
    timestamp: float
    keypoints: int
    matches: int
    inliers: int
    lost: bool = False
    keyframe: bool = False


def _lift(features, frame, k: CameraIntrinsics):
    """Keep keypoints with valid depth and back-project them."""
    r = np.rint(features.uv).astype(np.intp)
    z = frame.depth[r[:, 1], r[:, 0]] if len(r) else np.zeros(0)
    ok = np.isfinite(z) & (z > 0)
    pts = backproject(features.uv[ok], z[ok], k) if ok.any() else np.zeros((0, 3))
    return features.uv[ok], features.descriptors[ok], pts


def track_sequence(frames, extractor, k: CameraIntrinsics, cfg: TrackerConfig | None = None):
    """Track every frame against the current keyframe.

    A frame that cannot be tracked keeps the previous pose and is flagged
    lost; with ``reset_on_loss`` it becomes the new keyframe if it has enough
    depth-backed keypoints. Returns ``(Trajectory, [FrameStats])``.
    """
    cfg = cfg or TrackerConfig()
    rng = np.random.default_rng(cfg.seed)
    traj, stats = Trajectory(), []
    kf = None
    for frame in frames:
        feats = extractor(frame.gray)
        uv, descs, pts = _lift(feats, frame, k)
        if kf is None:
            kf = Keyframe(frame, uv, descs, pts, Se3Pose.identity())
            traj.append(frame.timestamp, kf.pose)
            stats.append(FrameStats(frame.timestamp, len(feats), 0, 0, keyframe=True))
            continue

        matches = match_nn(kf.descriptors, descs, cfg.max_hamming, cfg.cross_check) if len(descs) and len(kf.descriptors) else []
        try:
            if not matches:
                raise TrackingFailure("no descriptor matches")
            ia = np.array([m.index_a for m in matches])
            ib = np.array([m.index_b for m in matches])
            t_kf_cur, inl = estimate_motion(pts[ib], kf.points[ia], cfg, rng)
        except TrackingFailure as exc:
            log.info("t=%.6f lost: %s", frame.timestamp, exc)
            held = traj.poses[-1]
            traj.append(frame.timestamp, held, lost=True)
            st = FrameStats(frame.timestamp, len(feats), len(matches), 0, lost=True)
            if cfg.reset_on_loss and len(pts) >= max(cfg.min_inliers, 3):
                kf = Keyframe(frame, uv, descs, pts, held)
                st.keyframe = True
            stats.append(st)
            continue

        pose = kf.pose @ t_kf_cur
        traj.append(frame.timestamp, pose)
        st = FrameStats(frame.timestamp, len(feats), len(matches), len(inl))
        if len(inl) < cfg.kf_inlier_floor or len(matches) < cfg.kf_match_floor * max(len(kf.descriptors), 1):
            kf = Keyframe(frame, uv, descs, pts, pose)
            st.keyframe = True
        stats.append(st)
    return traj, stats


def stats_report(stats: list[FrameStats]) -> dict:
    """Per-frame keypoints / inliers / fractions plus mean and median aggregates.

    ``inlier_fraction`` is inliers over matches; ``keypoint_fraction`` is
    inliers over all detected keypoints. Frames without matches are left out
    of the aggregates.
    """
    rows = []
    for s in stats:
        rows.append({
            "timestamp": s.timestamp,
            "keypoints": s.keypoints,
            "matches": s.matches,
            "inliers": s.inliers,
            "inlier_fraction": s.inliers / s.matches if s.matches else float("nan"),
            "keypoint_fraction": s.inliers / s.keypoints if s.keypoints else float("nan"),
        })
    agg = {}
    for key in ("keypoints", "inliers", "inlier_fraction", "keypoint_fraction"):
        vals = np.array([r[key] for r in rows if r["matches"] > 0], dtype=np.float64)
        agg[f"mean_{key}"] = float(vals.mean()) if len(vals) else float("nan")
        agg[f"median_{key}"] = float(np.median(vals)) if len(vals) else float("nan")
    return {"rows": rows, "aggregate": agg}


def write_stats_csv(path, stats: list[FrameStats]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "keypoints", "matches", "inliers"])
        for s in stats:
            w.writerow([f"{s.timestamp:.6f}", s.keypoints, s.matches, s.inliers])


def read_stats_csv(path) -> list[FrameStats]:
    with open(path, newline="") as fh:
        return [FrameStats(float(r["timestamp"]), int(r["keypoints"]), int(r["matches"]), int(r["inliers"]))
                for r in csv.DictReader(fh)]
