"""Pinhole camera, rigid poses, the ground-truth correspondence warp and
closed-form rigid alignment.

Naming: ``pi`` is used with both directions in the literature, so it is
avoided. Pixel->3D is :func:`backproject`, 3D->pixel is :func:`project`, and
the warp is ``project(R @ backproject(x, d) + t)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    BehindCameraError,
    DegenerateConfigurationError,
    GeometryError,
    InvalidDepthError,
    OutOfCorrespondenceError,
)

_ORTHO_TOL = 1e-9


class PixelCoord(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 5000.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )
        if not self.depth_scale > 0:
            raise GeometryError(f"depth_scale must be positive, got {self.depth_scale}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics after integer block downsampling by ``factor``.

        Pixel centers sit at integer coordinates, so the principal point maps
        as ``(c + 0.5) / factor - 0.5``.
        """
        return CameraIntrinsics(
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx + 0.5) / factor - 0.5,
            cy=(self.cy + 0.5) / factor - 0.5,
            width=self.width // factor,
            height=self.height // factor,
            depth_scale=self.depth_scale,
        )

    def in_bounds(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


# Published TUM RGB-D calibrations (640x480).
TUM_FR1 = CameraIntrinsics(517.3, 516.5, 318.6, 255.3, 640, 480)
TUM_FR2 = CameraIntrinsics(520.9, 521.0, 325.1, 249.7, 640, 480)
TUM_FR3 = CameraIntrinsics(535.4, 539.2, 320.1, 247.6, 640, 480)


def _check_rotation(r: np.ndarray):
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise GeometryError(f"rotation must be a finite 3x3 matrix, got shape {r.shape}")
    if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
        raise GeometryError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
        raise GeometryError("rotation determinant is not +1")


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class Se3Pose:
    """Rigid motion ``x -> R x + t``. Validated once at construction."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise GeometryError(f"translation must be a finite 3-vector, got {t!r}")
        _check_rotation(r)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Se3Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, translation, quat_xyzw) -> "Se3Pose":
        q = np.asarray(quat_xyzw, dtype=np.float64)
        return cls(Rotation.from_quat(q / np.linalg.norm(q)).as_matrix(), translation)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (x, y, z, w) with w >= 0."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Se3Pose":
        rt = self.rotation.T
        return Se3Pose(rt, -rt @ self.translation)

    def compose(self, other: "Se3Pose") -> "Se3Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        r = self.rotation @ other.rotation
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-12:
            r = orthonormalize(r)
        return Se3Pose(r, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def __repr__(self):
        return f"Se3Pose(t={np.round(self.translation, 6).tolist()}, q={np.round(self.quaternion(), 6).tolist()})"


def transform_points(rotation, translation, points) -> np.ndarray:
    """Apply possibly-batched rigid motions. rotation (...,3,3), translation (...,3)."""
    return np.einsum("...ij,...j->...i", rotation, points) + translation


def backproject(p, depth_m, k: CameraIntrinsics) -> np.ndarray:
    """Pixel + metric depth -> camera-frame 3D point(s)."""
    uv = np.asarray(p, dtype=np.float64)
    z = np.asarray(depth_m, dtype=np.float64)
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise InvalidDepthError("depth must be positive and finite")
    x = (uv[..., 0] - k.cx) * z / k.fx
    y = (uv[..., 1] - k.cy) * z / k.fy
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


def project(points, k: CameraIntrinsics):
    """Camera-frame 3D point(s) -> pixel(s). A single point returns a PixelCoord."""
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    if np.any(~(z > 0)):
        raise BehindCameraError("point has Z <= 0")
    u = k.fx * pts[..., 0] / z + k.cx
    v = k.fy * pts[..., 1] / z + k.cy
    if pts.ndim == 1:
        return PixelCoord(float(u), float(v))
    return np.stack([u, v], axis=-1)


def warp_points(uv, depth_m, rotation, translation, k: CameraIntrinsics):
    """Vectorized warp that never raises.

    Returns ``(uv_b, z_b, valid)`` where ``valid`` flags finite positive source
    depth and a positive warped depth. Invalid rows hold NaN. Bounds are not
    checked here.
    """
    uv = np.asarray(uv, dtype=np.float64)
    z = np.asarray(depth_m, dtype=np.float64)
    ok = np.isfinite(z) & (z > 0)
    zs = np.where(ok, z, 1.0)
    x = (uv[..., 0] - k.cx) * zs / k.fx
    y = (uv[..., 1] - k.cy) * zs / k.fy
    pts = np.stack([x, y, np.broadcast_to(zs, x.shape)], axis=-1)
    moved = transform_points(rotation, translation, pts)
    zb = moved[..., 2]
    ok = ok & (zb > 0)
    zsafe = np.where(ok, zb, 1.0)
    uvb = np.stack([k.fx * moved[..., 0] / zsafe + k.cx, k.fy * moved[..., 1] / zsafe + k.cy], axis=-1)
    uvb[~ok] = np.nan
    return uvb, np.where(ok, zb, np.nan), ok


def warp_correspondence(p, depth_m, t_ab: Se3Pose, k: CameraIntrinsics):
    """Map pixel ``p`` with depth in view A into view B; returns (PixelCoord, warped depth)."""
    try:
        pt = backproject(np.asarray(p, dtype=np.float64), depth_m, k)
        moved = t_ab.apply(pt)
        uv = project(moved, k)
    except (InvalidDepthError, BehindCameraError) as exc:
        raise OutOfCorrespondenceError(str(exc)) from exc
    return uv, float(moved[2])


def rigid_align(src, dst, allow_degenerate: bool = False) -> Se3Pose:
    """Least-squares ``R, t`` minimising ``sum |R src_i + t - dst_i|^2`` (no scale).

    With ``allow_degenerate`` a rank-deficient configuration (collinear or
    coincident points, at least 2 pairs) returns one of the equally optimal
    solutions instead of raising; trajectory alignment needs this.
    """
    a = np.asarray(src, dtype=np.float64)
    b = np.asarray(dst, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise DegenerateConfigurationError(f"need matching Nx3 arrays, got {a.shape} and {b.shape}")
    if len(a) < (2 if allow_degenerate else 3):
        raise DegenerateConfigurationError(f"need at least 3 point pairs, got {len(a)}")
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, s, vt = np.linalg.svd(h)
    if not np.all(np.isfinite(s)):
        raise DegenerateConfigurationError("non-finite points")
    if not allow_degenerate and s[1] <= 1e-10 * max(s[0], 1e-300):
        raise DegenerateConfigurationError("cross-covariance is rank deficient (collinear points?)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Se3Pose(r, cb - r @ ca)
