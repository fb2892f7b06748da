"""TUM RGB-D sequence ingestion, timestamp association and ground-truth
correspondences.

Directory layout: ``rgb.txt`` and ``depth.txt`` ("timestamp filename" lines),
optional ``groundtruth.txt`` ("timestamp tx ty tz qx qy qz qw"), ``#`` comments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .detection import visible_mask
from .errors import IngestionError, UnsupervisedPairError
from .geometry import TUM_FR1, TUM_FR2, TUM_FR3, CameraIntrinsics, PixelCoord, Se3Pose, warp_points

log = logging.getLogger(__name__)

LUMA_601 = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class Frame:
    gray: np.ndarray  # (H, W) in [0, 1]
    depth: np.ndarray  # (H, W) meters, 0 = missing
    timestamp: float
    gt_pose: Se3Pose | None = None  # camera-to-world
    name: str = ""

    def __post_init__(self):
        if self.gray.shape != self.depth.shape:
            raise ValueError(f"gray {self.gray.shape} and depth {self.depth.shape} differ in size")


@dataclass
class DatasetConfig:
    depth_scale: float = 5000.0
    max_dt: float = 0.02
    downsample: int = 1
    intrinsics: CameraIntrinsics | None = None  # full-resolution calibration; guessed from the path if None
    max_frames: int | None = None


@dataclass
class CorrespondenceSet:
    frame_pair_ids: tuple
    uv_a: np.ndarray  # (N, 2)
    uv_b: np.ndarray  # (N, 2), continuous
    relative_pose: Se3Pose  # maps A-camera points into the B camera
    depth_a: np.ndarray = field(default=None)

    @property
    def pairs(self) -> list:
        return [(PixelCoord(*a), PixelCoord(*b)) for a, b in zip(self.uv_a.tolist(), self.uv_b.tolist())]

    def __len__(self):
        return len(self.uv_a)


# ---------------------------------------------------------------- text files

def read_index(path) -> list[tuple[float, list[str]]]:
    """Parse a "timestamp value..." file; errors name the file and line number."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing index file: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            ts = float(parts[0])
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: cannot parse timestamp {parts[0]!r}") from None
        if len(parts) < 2:
            raise IngestionError(f"{path}:{lineno}: expected 'timestamp value', got {line!r}")
        entries.append((ts, parts[1:]))
    return entries


def read_trajectory(path) -> tuple[np.ndarray, list[Se3Pose]]:
    stamps, poses = [], []
    for ts, vals in read_index(path):
        try:
            nums = [float(x) for x in vals]
            if len(nums) != 7:
                raise ValueError
            pose = Se3Pose.from_quaternion(nums[:3], nums[3:])
        except ValueError:
            raise IngestionError(f"{path}: bad trajectory line at t={ts}: {' '.join(vals)!r}") from None
        stamps.append(ts)
        poses.append(pose)
    return np.asarray(stamps), poses


def format_pose_line(ts: float, pose: Se3Pose) -> str:
    t, q = pose.translation, pose.quaternion()
    return f"{ts:.6f} " + " ".join(f"{x:.9f}" for x in (*t, *q))


def write_trajectory(path, stamps, poses, lost=()) -> None:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    lines += [f"# lost {ts:.6f}" for ts in lost]
    lines += [format_pose_line(ts, p) for ts, p in zip(stamps, poses)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_lost_stamps(path) -> np.ndarray:
    """Timestamps flagged by ``# lost`` comment lines of a written trajectory."""
    out = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if len(parts) == 3 and parts[:2] == ["#", "lost"]:
            out.append(float(parts[2]))
    return np.asarray(out)


# --------------------------------------------------------------- association

def associate(ts_a, ts_b, max_dt: float = 0.02) -> list[tuple[int, int]]:
    """Greedy nearest matching: pairs within ``max_dt`` taken by increasing gap.

    Each index is used at most once; ties go to the lower (i, j). Output is
    sorted by ``i``.
    """
    a = np.asarray(ts_a, dtype=np.float64)
    b = np.asarray(ts_b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        return []
    lo = np.searchsorted(b, a - max_dt, side="left")
    hi = np.searchsorted(b, a + max_dt, side="right")
    cand = [(abs(a[i] - b[j]), i, j) for i in range(len(a)) for j in range(lo[i], hi[i]) if abs(a[i] - b[j]) <= max_dt]
    cand.sort()
    used_a, used_b, out = set(), set(), []
    for _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append((i, j))
    return sorted(out)


# -------------------------------------------------------------------- images

def load_gray(path) -> np.ndarray:
    try:
        img = np.asarray(Image.open(path))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    if img.ndim == 3:
        img = img[..., :3].astype(np.float64) @ LUMA_601
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    return np.clip(np.asarray(img, dtype=np.float64) / scale, 0.0, 1.0)


def load_depth(path, depth_scale: float) -> np.ndarray:
    try:
        raw = np.asarray(Image.open(path))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read depth image {path}: {exc}") from exc
    return raw.astype(np.float64) / depth_scale


def save_gray_png(path, gray) -> None:
    Image.fromarray(np.clip(np.rint(np.asarray(gray) * 255.0), 0, 255).astype(np.uint8)).save(path)


def save_depth_png(path, depth_m, depth_scale: float = 5000.0) -> None:
    raw = np.clip(np.rint(np.asarray(depth_m) * depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


def downsample_gray(gray: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return gray
    h, w = gray.shape[0] // f * f, gray.shape[1] // f * f
    return gray[:h, :w].reshape(h // f, f, w // f, f).mean(axis=(1, 3))


def downsample_depth(depth: np.ndarray, f: int) -> np.ndarray:
    """Block mean over valid (non-zero) readings; 0 where the block has none."""
    if f == 1:
        return depth
    h, w = depth.shape[0] // f * f, depth.shape[1] // f * f
    blocks = depth[:h, :w].reshape(h // f, f, w // f, f)
    valid = blocks > 0
    n = valid.sum(axis=(1, 3))
    total = np.where(valid, blocks, 0.0).sum(axis=(1, 3))
    return np.where(n > 0, total / np.maximum(n, 1), 0.0)


# ------------------------------------------------------------------ sequences

def guess_intrinsics(directory) -> CameraIntrinsics:
    name = str(directory).lower()
    if "freiburg1" in name or "fr1" in name:
        return TUM_FR1
    if "freiburg2" in name or "fr2" in name:
        return TUM_FR2
    if "freiburg3" in name or "fr3" in name:
        return TUM_FR3
    cam = Path(directory) / "camera.txt"
    if cam.is_file():
        return read_camera_file(cam)
    raise IngestionError(f"cannot infer intrinsics for {directory}; add camera.txt or pass them in the config")


def read_camera_file(path) -> CameraIntrinsics:
    """``camera.txt``: one line "fx fy cx cy width height [depth_scale]"."""
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            v = line.split()
            try:
                return CameraIntrinsics(float(v[0]), float(v[1]), float(v[2]), float(v[3]), int(v[4]), int(v[5]),
                                        float(v[6]) if len(v) > 6 else 5000.0)
            except (IndexError, ValueError) as exc:
                raise IngestionError(f"{path}: bad camera line {line!r}") from exc
    raise IngestionError(f"{path}: no camera line")


def write_camera_file(path, k: CameraIntrinsics) -> None:
    Path(path).write_text("# fx fy cx cy width height depth_scale\n"
                          f"{k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r} {k.width} {k.height} {k.depth_scale!r}\n")


def sequence_intrinsics(directory, cfg: DatasetConfig) -> CameraIntrinsics:
    k = cfg.intrinsics or guess_intrinsics(directory)
    return k.scaled(cfg.downsample) if cfg.downsample > 1 else k


def associate_sequence(directory, cfg: DatasetConfig):
    """Index-level association: ``[(t_rgb, rgb_file, depth_file, gt_pose | None)]``."""
    d = Path(directory)
    if not d.is_dir():
        raise IngestionError(f"dataset directory not found: {d}")
    rgb = read_index(d / "rgb.txt")
    depth = read_index(d / "depth.txt")
    rgb.sort(key=lambda e: e[0])
    depth.sort(key=lambda e: e[0])
    gt_stamps, gt_poses = (None, None)
    if (d / "groundtruth.txt").is_file():
        gt_stamps, gt_poses = read_trajectory(d / "groundtruth.txt")
        order = np.argsort(gt_stamps, kind="stable")
        gt_stamps, gt_poses = gt_stamps[order], [gt_poses[i] for i in order]

    pairs = associate([e[0] for e in rgb], [e[0] for e in depth], cfg.max_dt)
    gt_of = {}
    if gt_stamps is not None:
        rgb_ts = [rgb[i][0] for i, _ in pairs]
        gt_of = {pairs[i][0]: gt_poses[j] for i, j in associate(rgb_ts, gt_stamps, cfg.max_dt)}
    dropped = len(rgb) - len(pairs)
    if dropped:
        log.info("%s: dropped %d rgb frames without depth within %.3fs", d, dropped, cfg.max_dt)
    out, last = [], -np.inf
    for i, j in pairs:
        ts = rgb[i][0]
        if ts <= last:
            continue
        last = ts
        out.append((ts, d / rgb[i][1][0], d / depth[j][1][0], gt_of.get(i)))
    return out


def load_sequence(directory, cfg: DatasetConfig | None = None) -> list[Frame]:
    cfg = cfg or DatasetConfig()
    entries = associate_sequence(directory, cfg)
    if cfg.max_frames is not None:
        entries = entries[: cfg.max_frames]
    frames = []
    for ts, rgb_path, depth_path, gt in entries:
        gray = downsample_gray(load_gray(rgb_path), cfg.downsample)
        depth = downsample_depth(load_depth(depth_path, cfg.depth_scale), cfg.downsample)
        if gray.shape != depth.shape:
            raise IngestionError(f"{rgb_path.name} and {depth_path.name} differ in size")
        frames.append(Frame(gray, depth, ts, gt, rgb_path.stem))
    return frames


def write_sequence(directory, frames: list[Frame], k: CameraIntrinsics | None = None) -> None:
    """Write frames in TUM layout (8-bit gray PNG, 16-bit depth PNG, groundtruth.txt)."""
    d = Path(directory)
    (d / "rgb").mkdir(parents=True, exist_ok=True)
    (d / "depth").mkdir(parents=True, exist_ok=True)
    scale = k.depth_scale if k is not None else 5000.0
    rgb_lines, depth_lines = ["# timestamp filename"], ["# timestamp filename"]
    for f in frames:
        name = f"{f.timestamp:.6f}.png"
        save_gray_png(d / "rgb" / name, f.gray)
        save_depth_png(d / "depth" / name, f.depth, scale)
        rgb_lines.append(f"{f.timestamp:.6f} rgb/{name}")
        depth_lines.append(f"{f.timestamp:.6f} depth/{name}")
    (d / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (d / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    if all(f.gt_pose is not None for f in frames):
        write_trajectory(d / "groundtruth.txt", [f.timestamp for f in frames], [f.gt_pose for f in frames])
    if k is not None:
        write_camera_file(d / "camera.txt", k)


# ---------------------------------------------------------- correspondences

def relative_pose(a: Frame, b: Frame) -> Se3Pose:
    """Motion taking A-camera coordinates to B-camera coordinates."""
    if a.gt_pose is None or b.gt_pose is None:
        raise UnsupervisedPairError(f"frames {a.name or a.timestamp} / {b.name or b.timestamp} lack ground-truth poses")
    return b.gt_pose.inverse() @ a.gt_pose


def make_correspondences(a: Frame, b: Frame, samples, k: CameraIntrinsics,
                         occlusion_tol: float = 0.05) -> CorrespondenceSet:
    """Warp sample pixels of A into B with the ground-truth relative pose.

    Samples without valid depth, warping out of bounds, or failing the
    relative-depth occlusion test against B's depth are dropped.
    """
    rel = relative_pose(a, b)
    uv = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    if len(uv):
        _, first = np.unique(uv, axis=0, return_index=True)
        uv = uv[np.sort(first)]
    h, w = a.depth.shape
    r = np.rint(uv).astype(np.intp)
    inside = (r[:, 0] >= 0) & (r[:, 0] < w) & (r[:, 1] >= 0) & (r[:, 1] < h)
    z = np.zeros(len(uv))
    z[inside] = a.depth[r[inside, 1], r[inside, 0]]
    uv_b, z_b, ok = warp_points(uv, z, rel.rotation, rel.translation, k)
    ok &= inside & (z > 0)
    ok &= visible_mask(uv_b, np.where(ok, z_b, 1.0), b.depth, occlusion_tol)
    ok &= k.in_bounds(np.where(ok[:, None], uv_b, -1.0))
    return CorrespondenceSet((a.name or a.timestamp, b.name or b.timestamp), uv[ok], uv_b[ok], rel, z[ok])
