"""Pinhole cameras, rigid transforms, and Plucker ray embeddings.

Conventions used throughout the package:

- Poses are world-to-camera: ``x_cam = R @ x_world + t``.
- Depth is the camera-frame z coordinate, not ray length.
- Pixel ``(col, row)`` of a raster samples the continuous image point
  ``(col + 0.5, row + 0.5)``; continuous coordinates passed to
  :func:`project` / :func:`unproject` are used verbatim.

All types are immutable after construction and all functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Intrinsics",
    "Pose",
    "PluckerRay",
    "DepthMap",
    "project",
    "project_points",
    "unproject",
    "unproject_points",
    "plucker_ray",
    "plucker_raster",
    "pixel_center_grid",
    "camera_from_json",
    "camera_to_json",
]

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


class Pose:
    """World-to-camera rigid transform ``[R | t]``.

    R must be a right-handed rotation: ``R^T R = I`` and ``det R = +1``,
    both within 1e-6.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        r = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def __setattr__(self, name, value):
        raise AttributeError("Pose is immutable")

    def __repr__(self):
        return f"Pose(R={self.rotation.tolist()}, t={self.translation.tolist()})"

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous world-to-camera matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Transform equal to applying ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def camera_center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def apply(self, points_world: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        p = np.asarray(points_world, dtype=np.float64)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class PluckerRay:
    """6D line coordinates (direction, origin x direction) of a viewing ray."""

    direction: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        m = np.asarray(self.moment, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("direction must be unit length")
        if abs(float(d @ m)) > 1e-9:
            raise ValueError("direction and moment must be orthogonal")
        d.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "moment", m)


class DepthMap:
    """Row-major scalar depth raster with per-pixel validity.

    A pixel is valid iff its depth is strictly positive and finite. Invalid
    pixels (<= 0, NaN, Inf) are carried through untouched but masked out.
    """

    __slots__ = ("values", "validity")

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("depth map must be a 2D raster")
        v = v.copy()
        v.setflags(write=False)
        with np.errstate(invalid="ignore"):
            mask = np.isfinite(v) & (v > 0)
        mask.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "validity", mask)

    def __setattr__(self, name, value):
        raise AttributeError("DepthMap is immutable")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def valid_count(self) -> int:
        return int(self.validity.sum())


def project(point_world, pose: Pose, k: Intrinsics):
    """Project one world point to continuous pixel coordinates.

    Returns ``(u, v, depth)`` with depth the camera-frame z, or ``None``
    when the point lies at or behind the camera plane (z <= 0). No frustum
    clamp is applied; callers check bounds.
    """
    p = np.asarray(point_world, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    pc = pose.rotation @ p + pose.translation
    z = pc[2]
    if z <= 0:
        return None
    u = k.fx * pc[0] / z + k.cx
    v = k.fy * pc[1] / z + k.cy
    return float(u), float(v), float(z)


def project_points(points_world: np.ndarray, pose: Pose, k: Intrinsics):
    """Vectorized projection of (N, 3) world points.

    Returns ``(uv, depth, in_front)`` where uv is (N, 2) continuous pixel
    coordinates (undefined where ``in_front`` is False) and depth is the
    camera-frame z.
    """
    pc = pose.apply(points_world)
    z = pc[:, 2]
    in_front = z > 0
    zsafe = np.where(in_front, z, 1.0)
    uv = np.empty((pc.shape[0], 2))
    uv[:, 0] = k.fx * pc[:, 0] / zsafe + k.cx
    uv[:, 1] = k.fy * pc[:, 1] / zsafe + k.cy
    return uv, z, in_front


def unproject(u, v, depth, pose: Pose, k: Intrinsics) -> np.ndarray:
    """Inverse of :func:`project`: pixel + depth back to a world point."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    xc = (u - k.cx) / k.fx * depth
    yc = (v - k.cy) / k.fy * depth
    cam = np.array([xc, yc, depth])
    return pose.rotation.T @ (cam - pose.translation)


def unproject_points(uv: np.ndarray, depth: np.ndarray, pose: Pose, k: Intrinsics):
    """Vectorized unprojection of (N, 2) pixels with (N,) positive depths."""
    uv = np.asarray(uv, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    cam = np.empty((uv.shape[0], 3))
    cam[:, 0] = (uv[:, 0] - k.cx) / k.fx * d
    cam[:, 1] = (uv[:, 1] - k.cy) / k.fy * d
    cam[:, 2] = d
    return (cam - pose.translation) @ pose.rotation


def plucker_ray(u, v, pose: Pose, k: Intrinsics) -> PluckerRay:
    """World-frame Plucker coordinates of the viewing ray through a pixel."""
    dc = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    dw = pose.rotation.T @ dc
    dw = dw / np.linalg.norm(dw)
    o = pose.camera_center()
    return PluckerRay(direction=dw, moment=np.cross(o, dw))


def plucker_raster(pose: Pose, k: Intrinsics) -> np.ndarray:
    """Per-pixel ray embedding as a (6, H, W) raster.

    Channels are (d_x, d_y, d_z, m_x, m_y, m_z); each pixel's ray passes
    through its center.
    """
    uu, vv = pixel_center_grid(k.height, k.width)
    dc = np.stack(
        [(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=0
    )
    dw = np.einsum("ji,jhw->ihw", pose.rotation, dc)
    dw = dw / np.linalg.norm(dw, axis=0, keepdims=True)
    o = pose.camera_center()
    moment = np.stack(
        [
            o[1] * dw[2] - o[2] * dw[1],
            o[2] * dw[0] - o[0] * dw[2],
            o[0] * dw[1] - o[1] * dw[0],
        ],
        axis=0,
    )
    return np.concatenate([dw, moment], axis=0)


def pixel_center_grid(height: int, width: int):
    """Continuous (u, v) coordinates of every pixel center, each (H, W)."""
    u = np.arange(width, dtype=np.float64) + 0.5
    v = np.arange(height, dtype=np.float64) + 0.5
    return np.meshgrid(u, v)


def camera_to_json(pose: Pose, k: Intrinsics) -> dict:
    """Serialize a camera to the interchange JSON object."""
    return {
        "fx": k.fx,
        "fy": k.fy,
        "cx": k.cx,
        "cy": k.cy,
        "width": k.width,
        "height": k.height,
        "R": [float(x) for x in pose.rotation.reshape(-1)],
        "t": [float(x) for x in pose.translation],
    }


def camera_from_json(obj: dict):
    """Parse the interchange camera JSON object into ``(Pose, Intrinsics)``."""
    try:
        k = Intrinsics(
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
        )
        r = np.asarray(obj["R"], dtype=np.float64)
        t = np.asarray(obj["t"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed camera JSON: {exc}") from exc
    if r.size != 9:
        raise ValueError("camera R must hold 9 row-major entries")
    if t.size != 3:
        raise ValueError("camera t must hold 3 entries")
    pose = Pose(r.reshape(3, 3), t)
    return pose, k
