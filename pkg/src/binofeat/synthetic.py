"""Ray-cast renderer for textured planar scenes with exact depth.

Used to build supervised training pairs and trajectories whose ground truth
is known exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.spatial.transform import Rotation

from .dataset_tum import Frame
from .geometry import CameraIntrinsics, Se3Pose

DESK_K = CameraIntrinsics(120.0, 120.0, 79.5, 63.5, 160, 128)
QVGA_K = CameraIntrinsics(260.0, 260.0, 159.5, 119.5, 320, 240)


def make_texture(rng: np.random.Generator, size: int = 512, n_rects: int = 900) -> np.ndarray:
    """Piecewise-constant patchwork of random rectangles over smooth noise, in [0, 1]."""
    tex = gaussian_filter(rng.random((size, size)), 8.0, mode="wrap")
    tex = (tex - tex.min()) / max(np.ptp(tex), 1e-9) * 0.4 + 0.3
    for _ in range(n_rects):
        w, h = rng.integers(4, 28, size=2)
        x, y = rng.integers(0, size - 28, size=2)
        tex[y : y + h, x : x + w] = rng.uniform(0.05, 0.95)
    return gaussian_filter(tex, 0.7, mode="wrap")


@dataclass
class Plane:
    """Points X with ``normal . X = offset``; texture laid out along ``e1``, ``e2`` from ``origin``."""

    normal: np.ndarray
    offset: float
    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    texture: np.ndarray
    texels_per_meter: float = 64.0


def box_scene(seed: int = 0, depth: float = 2.0) -> list[Plane]:
    """Back wall at ``Z = depth``, a floor and a left wall, each with its own texture."""
    rng = np.random.default_rng(seed)
    ex, ey, ez = np.eye(3)
    half = 4.0
    return [
        Plane(-ez, -depth, np.array([-half, -half, depth]), ex, ey, make_texture(rng)),
        Plane(-ey, -1.0, np.array([-half, 1.0, -half]), ex, ez, make_texture(rng)),
        Plane(ex, -1.6, np.array([-1.6, -half, -half]), ez, ey, make_texture(rng)),
    ]


def render(pose_wc: Se3Pose, k: CameraIntrinsics, planes: list[Plane]):
    """Gray image and metric depth seen from camera-to-world pose ``pose_wc``."""
    u, v = np.meshgrid(np.arange(k.width, dtype=np.float64), np.arange(k.height, dtype=np.float64))
    rays_c = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    rays_w = rays_c @ pose_wc.rotation.T
    o = pose_wc.translation
    depth = np.full(u.shape, np.inf)
    gray = np.zeros(u.shape)
    for pl in planes:
        denom = rays_w @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (pl.offset - pl.normal @ o) / denom
        hit = np.isfinite(lam) & (lam > 1e-6) & (lam < depth)
        if not np.any(hit):
            continue
        pts = o + lam[hit][:, None] * rays_w[hit]
        rel = pts - pl.origin
        s = rel @ pl.e1 * pl.texels_per_meter
        t = rel @ pl.e2 * pl.texels_per_meter
        gray[hit] = map_coordinates(pl.texture, [t, s], order=1, mode="mirror")
        depth[hit] = lam[hit]  # rays have unit z in the camera, so lam is camera depth
    depth[~np.isfinite(depth)] = 0.0
    return np.clip(gray, 0.0, 1.0), depth


def render_frame(pose_wc: Se3Pose, k: CameraIntrinsics, planes, timestamp: float, name: str = "") -> Frame:
    gray, depth = render(pose_wc, k, planes)
    return Frame(gray, depth, timestamp, pose_wc, name)


def _small_pose(rng, max_t: float, max_deg: float) -> Se3Pose:
    rot = Rotation.from_rotvec(rng.uniform(-1, 1, 3) * np.deg2rad(max_deg)).as_matrix()
    return Se3Pose(rot, rng.uniform(-max_t, max_t, 3))


def make_pairs(n: int, seed: int = 0, k: CameraIntrinsics = DESK_K, max_translation: float = 0.12,
               max_rotation_deg: float = 4.0) -> list[tuple[Frame, Frame]]:
    """``n`` frame pairs; each pair gets its own scene texture and a random relative motion."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        planes = box_scene(int(rng.integers(2**31)))
        pose_a = _small_pose(rng, 0.3, 6.0)
        pose_b = pose_a @ _small_pose(rng, max_translation, max_rotation_deg)
        out.append((render_frame(pose_a, k, planes, 2.0 * i, f"p{i}a"),
                    render_frame(pose_b, k, planes, 2.0 * i + 1.0, f"p{i}b")))
    return out


def straight_path(n: int, length: float = 0.5, direction=(1.0, 0.0, 0.0), start=(-0.25, 0.0, 0.0)) -> list[Se3Pose]:
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return [Se3Pose(np.eye(3), np.asarray(start) + d * length * i / max(n - 1, 1)) for i in range(n)]


def make_sequence(poses: list[Se3Pose], seed: int = 0, k: CameraIntrinsics = QVGA_K, fps: float = 30.0,
                  t0: float = 1000.0) -> list[Frame]:
    planes = box_scene(seed)
    return [render_frame(p, k, planes, t0 + i / fps, f"{i:05d}") for i, p in enumerate(poses)]
