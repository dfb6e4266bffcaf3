"""Analytic test scenes: closed-form depth, correspondences, and trajectories.

Scenes are built from planes, spheres, and boxes only, so every ray
intersection has a closed form and rendered depth can serve as ground truth
for the geometric pipeline. Camera trajectories (orbit, dolly, revisit
loop) are generated here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DepthMap, Intrinsics, Pose, pixel_center_grid, project_points

__all__ = [
    "Plane",
    "Sphere",
    "Box",
    "AnalyticScene",
    "Trajectory",
    "render_depth",
    "analytic_correspondence",
    "correspondence_grid",
    "make_trajectory",
    "look_at_pose",
    "checkerboard",
    "scene_from_json",
    "scene_to_json",
    "VISIBLE",
    "OCCLUDED",
    "OFFSCREEN",
]

VISIBLE = "visible"
OCCLUDED = "occluded"
OFFSCREEN = "offscreen"

_MISS = np.inf


@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point`` with unit ``normal``."""

    point: tuple
    normal: tuple

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "point", tuple(float(x) for x in self.point))
        object.__setattr__(self, "normal", tuple(float(x) for x in n / norm))

    def intersect(self, origins, dirs):
        n = np.asarray(self.normal)
        p0 = np.asarray(self.point)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((p0 - origins) @ n) / denom
        s = np.where((np.abs(denom) > 1e-12) & (s > 1e-9), s, _MISS)
        return s


@dataclass(frozen=True)
class Sphere:
    """Sphere with positive radius."""

    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))

    def intersect(self, origins, dirs):
        c = np.asarray(self.center)
        oc = origins - c
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2.0 * np.einsum("ij,ij->i", dirs, oc)
        cc = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - 4 * a * cc
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        s0 = (-b - sq) / (2 * a)
        s1 = (-b + sq) / (2 * a)
        s = np.where(s0 > 1e-9, s0, np.where(s1 > 1e-9, s1, _MISS))
        return np.where(hit, s, _MISS)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; min corner strictly below max corner."""

    min_corner: tuple
    max_corner: tuple

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if not np.all(lo < hi):
            raise ValueError("box min must be strictly below max componentwise")
        object.__setattr__(self, "min_corner", tuple(float(x) for x in lo))
        object.__setattr__(self, "max_corner", tuple(float(x) for x in hi))

    def intersect(self, origins, dirs):
        lo = np.asarray(self.min_corner)
        hi = np.asarray(self.max_corner)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origins) / dirs
            t2 = (hi - origins) / dirs
        # Degenerate (axis-parallel) rays: slab test passes iff origin inside slab.
        parallel = np.abs(dirs) < 1e-15
        inside = (origins >= lo) & (origins <= hi)
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        near = tmin.max(axis=1)
        far = tmax.min(axis=1)
        hit = (near <= far) & (far > 1e-9)
        s = np.where(near > 1e-9, near, far)
        return np.where(hit, s, _MISS)


class AnalyticScene:
    """A set of analytic primitives supporting nearest-hit ray queries."""

    def __init__(self, primitives):
        prims = tuple(primitives)
        if not prims:
            raise ValueError("scene needs at least one primitive")
        self.primitives = prims

    def intersect(self, origins, dirs):
        """Smallest positive ray parameter per ray; inf where nothing is hit."""
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        best = np.full(origins.shape[0], _MISS)
        for prim in self.primitives:
            best = np.minimum(best, prim.intersect(origins, dirs))
        return best


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera path; ``kind`` tags how it was generated."""

    steps: tuple  # of (Pose, Intrinsics)
    kind: str

    def __post_init__(self):
        if not self.steps:
            raise ValueError("trajectory must be nonempty")

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i):
        return self.steps[i]


def _camera_rays(pose: Pose, k: Intrinsics):
    """World origin and per-pixel world directions with camera-frame z = 1.

    With this scaling the ray parameter of any hit equals its camera-frame
    depth directly.
    """
    uu, vv = pixel_center_grid(k.height, k.width)
    dc = np.stack(
        [
            (uu - k.cx) / k.fx,
            (vv - k.cy) / k.fy,
            np.ones_like(uu),
        ],
        axis=-1,
    ).reshape(-1, 3)
    dw = dc @ pose.rotation
    origin = pose.camera_center()
    return origin, dw


def render_depth(scene: AnalyticScene, pose: Pose, k: Intrinsics) -> DepthMap:
    """Ray-cast the scene to a depth map; misses come out invalid (0)."""
    origin, dirs = _camera_rays(pose, k)
    origins = np.broadcast_to(origin, dirs.shape)
    s = scene.intersect(origins, dirs)
    depth = np.where(np.isfinite(s), s, 0.0).reshape(k.height, k.width)
    return DepthMap(depth)


def correspondence_grid(scene, pose_a, k_a, pose_b, k_b, occl_tol=1e-6):
    """Dense ground-truth correspondence from view a into view b.

    Returns ``(status, uv_b, depth_a)``: status is an (H, W) array of
    VISIBLE / OCCLUDED / OFFSCREEN codes (or "" where the source ray misses
    geometry), uv_b holds continuous target pixel coordinates, and depth_a
    the source depth. Occlusion is decided by re-casting from b toward the
    source surface point.
    """
    h, w = k_a.height, k_a.width
    origin_a, dirs_a = _camera_rays(pose_a, k_a)
    s = scene.intersect(np.broadcast_to(origin_a, dirs_a.shape), dirs_a)
    hit = np.isfinite(s)

    pts = origin_a + np.where(hit, s, 0.0)[:, None] * dirs_a
    uv_b, z_b, in_front = project_points(pts, pose_b, k_b)
    on_screen = (
        in_front
        & (uv_b[:, 0] >= 0)
        & (uv_b[:, 0] < k_b.width)
        & (uv_b[:, 1] >= 0)
        & (uv_b[:, 1] < k_b.height)
    )

    origin_b = pose_b.camera_center()
    to_pt = pts - origin_b
    s_b = scene.intersect(np.broadcast_to(origin_b, to_pt.shape), to_pt)
    # First hit from b at parameter ~1 means the point itself is seen.
    dist = np.linalg.norm(to_pt, axis=1)
    blocked = np.isfinite(s_b) & (np.abs(s_b - 1.0) * dist > occl_tol)

    status = np.full(h * w, "", dtype=object)
    status[hit & ~on_screen] = OFFSCREEN
    status[hit & on_screen & blocked] = OCCLUDED
    status[hit & on_screen & ~blocked] = VISIBLE
    depth_a = np.where(hit, s, 0.0)
    return (
        status.reshape(h, w),
        uv_b.reshape(h, w, 2),
        depth_a.reshape(h, w),
    )


def analytic_correspondence(scene, pose_a, k_a, pose_b, k_b, pixel_a, occl_tol=1e-6):
    """Map one continuous source pixel into view b.

    Returns ``(status, uv_b)`` with status VISIBLE, OCCLUDED, or OFFSCREEN;
    uv_b is None unless visible. Raises if the source ray misses all
    geometry.
    """
    u, v = float(pixel_a[0]), float(pixel_a[1])
    dc = np.array([(u - k_a.cx) / k_a.fx, (v - k_a.cy) / k_a.fy, 1.0])
    dw = pose_a.rotation.T @ dc
    origin_a = pose_a.camera_center()
    s = scene.intersect(origin_a[None, :], dw[None, :])[0]
    if not np.isfinite(s):
        raise ValueError("source pixel misses all geometry")
    pt = origin_a + s * dw

    uv_b, z_b, in_front = project_points(pt[None, :], pose_b, k_b)
    if not in_front[0]:
        return OFFSCREEN, None
    ub, vb = uv_b[0]
    if not (0 <= ub < k_b.width and 0 <= vb < k_b.height):
        return OFFSCREEN, None

    origin_b = pose_b.camera_center()
    to_pt = pt - origin_b
    s_b = scene.intersect(origin_b[None, :], to_pt[None, :])[0]
    if np.isfinite(s_b) and abs(s_b - 1.0) * np.linalg.norm(to_pt) > occl_tol:
        return OCCLUDED, None
    return VISIBLE, np.array([ub, vb])


def look_at_pose(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """World-to-camera pose for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n == 0:
        raise ValueError("eye and target coincide")
    z = fwd / n
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        # Viewing direction parallel to up: pick any perpendicular right vector.
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            x = np.cross(np.array([0.0, 0.0, 1.0]), z)
            nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=0)
    return Pose(r, -r @ eye)


def make_trajectory(kind: str, **params) -> Trajectory:
    """Generate a named camera trajectory.

    kind "orbit": circle around ``center`` at ``radius`` with ``n`` poses,
    all looking at the center; optional ``elevation`` (world y offset).
    kind "dolly": ``n`` poses from ``start`` stepping ``step`` along
    ``direction`` with constant orientation facing along the direction,
    or looking at an optional fixed ``target``.
    kind "revisit-loop": closed orbit whose final pose equals the first
    exactly.
    """
    k = params.get("intrinsics")
    if k is None:
        raise ValueError("intrinsics required")
    n = int(params.get("n", 0))
    if n < 1:
        raise ValueError("n must be >= 1")

    if kind in ("orbit", "revisit-loop"):
        center = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
        radius = float(params.get("radius", 0.0))
        if radius <= 0:
            raise ValueError("radius must be positive")
        elevation = float(params.get("elevation", 0.0))
        closed = kind == "revisit-loop"
        count = n - 1 if closed else n
        if closed and n < 2:
            raise ValueError("revisit loop needs at least 2 poses")
        steps = []
        for i in range(count):
            theta = 2.0 * np.pi * i / count
            eye = center + np.array(
                [radius * np.cos(theta), elevation, radius * np.sin(theta)]
            )
            steps.append((look_at_pose(eye, center), k))
        if closed:
            steps.append(steps[0])
        return Trajectory(tuple(steps), kind)

    if kind == "dolly":
        start = np.asarray(params.get("start", (0.0, 0.0, 0.0)), dtype=np.float64)
        direction = np.asarray(params.get("direction", (0.0, 0.0, 1.0)), dtype=np.float64)
        dn = np.linalg.norm(direction)
        if dn == 0:
            raise ValueError("direction must be nonzero")
        direction = direction / dn
        step = float(params.get("step", 1.0))
        target = params.get("target")
        steps = []
        for i in range(n):
            eye = start + i * step * direction
            aim = np.asarray(target, dtype=np.float64) if target is not None else eye + direction
            steps.append((look_at_pose(eye, aim), k))
        return Trajectory(tuple(steps), kind)

    raise ValueError(f"unknown trajectory kind: {kind!r}")


def checkerboard(height: int, width: int, cell: int = 16) -> np.ndarray:
    """Procedural RGB checkerboard, uint8 (H, W, 3); used as warp test texture."""
    r = np.arange(height)[:, None] // cell
    c = np.arange(width)[None, :] // cell
    a = ((r + c) % 2).astype(np.uint8)
    rgb = np.empty((height, width, 3), dtype=np.uint8)
    rgb[..., 0] = 40 + 180 * a
    rgb[..., 1] = 220 - 180 * a
    rgb[..., 2] = (32 * (r + 2 * c)) % 255
    return rgb


def scene_to_json(scene: AnalyticScene) -> dict:
    prims = []
    for p in scene.primitives:
        if isinstance(p, Plane):
            prims.append({"type": "plane", "point": list(p.point), "normal": list(p.normal)})
        elif isinstance(p, Sphere):
            prims.append({"type": "sphere", "center": list(p.center), "radius": p.radius})
        elif isinstance(p, Box):
            prims.append({"type": "box", "min": list(p.min_corner), "max": list(p.max_corner)})
        else:
            raise TypeError(f"unknown primitive {type(p)!r}")
    return {"primitives": prims}


def scene_from_json(obj: dict) -> AnalyticScene:
    prims = []
    for entry in obj.get("primitives", []):
        kind = entry.get("type")
        if kind == "plane":
            prims.append(Plane(tuple(entry["point"]), tuple(entry["normal"])))
        elif kind == "sphere":
            prims.append(Sphere(tuple(entry["center"]), float(entry["radius"])))
        elif kind == "box":
            prims.append(Box(tuple(entry["min"]), tuple(entry["max"])))
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
    return AnalyticScene(prims)
