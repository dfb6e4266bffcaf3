"""Per-frame 3D scene cache.

Each inserted frame keeps its full-resolution depth, camera, and a
downsampled point cloud unprojected into world coordinates. Frames are
stored independently and never fused into a shared point set; the cache
grows linearly and unboundedly with the video.

On disk a cache is a directory: ``manifest.json`` plus one ``depth_<id>.lyd``
raster per frame and optional ``rgb_<id>.png`` payloads. The ``.lyd`` format
is magic ``LYD1``, little-endian u32 width and height, then width*height
little-endian float32 values row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import (
    DepthMap,
    Intrinsics,
    Pose,
    camera_from_json,
    camera_to_json,
    unproject_points,
)

__all__ = [
    "FrameRecord",
    "SceneCache",
    "CacheFormatError",
    "save_cache",
    "load_cache",
    "write_depth_raster",
    "read_depth_raster",
]

_MAGIC = b"LYD1"
_MANIFEST_FORMAT = "scenemem-cache"
_MANIFEST_VERSION = 1

DEFAULT_SUBSAMPLE = 8


class CacheFormatError(Exception):
    """Raised when a cache container on disk is malformed."""


class FrameRecord:
    """One cached frame: camera, depth, and its downsampled world points."""

    __slots__ = ("frame_id", "intrinsics", "pose", "depth", "cloud", "cloud_valid", "rgb_ref")

    def __init__(self, frame_id, intrinsics, pose, depth, cloud, cloud_valid, rgb_ref=None):
        self.frame_id = int(frame_id)
        self.intrinsics = intrinsics
        self.pose = pose
        self.depth = depth
        self.cloud = cloud
        self.cloud_valid = cloud_valid
        self.rgb_ref = rgb_ref

    def valid_points(self) -> np.ndarray:
        """World coordinates of the valid cloud cells, shape (N, 3)."""
        return self.cloud[self.cloud_valid]


class SceneCache:
    """Ordered, append-only collection of :class:`FrameRecord`.

    ``scene_scale`` is the median valid depth of the anchor frame (frame 0),
    fixed when the anchor is inserted; retrieval uses it to normalize depths
    so occlusion thresholds are scale-invariant.
    """

    def __init__(self, subsample_d: int = DEFAULT_SUBSAMPLE):
        if subsample_d < 1:
            raise ValueError("subsample factor must be >= 1")
        self.subsample_d = int(subsample_d)
        self.frames: list[FrameRecord] = []
        self.scene_scale: float | None = None
        self._pooled = None

    def pooled_points(self):
        """All frames' valid cloud points in one array, for bulk queries.

        Returns ``(points (N, 4) float32 homogeneous, frame_idx (N,)
        int32)``; rebuilt lazily after inserts. The unit fourth coordinate
        lets a query apply a whole rigid transform as one matmul.
        """
        if self._pooled is None or self._pooled[2] != len(self.frames):
            chunks = [r.valid_points() for r in self.frames]
            total = sum(c.shape[0] for c in chunks)
            pts = np.ones((total, 4), dtype=np.float32)
            fidx = np.empty(total, dtype=np.int32)
            at = 0
            for i, c in enumerate(chunks):
                pts[at : at + c.shape[0], :3] = c
                fidx[at : at + c.shape[0]] = i
                at += c.shape[0]
            self._pooled = (pts, fidx, len(self.frames))
        return self._pooled[0], self._pooled[1]

    @property
    def anchor_id(self) -> int:
        return 0

    def frame_count(self) -> int:
        return len(self.frames)

    def get_frame(self, frame_id: int) -> FrameRecord:
        if not 0 <= frame_id < len(self.frames):
            raise KeyError(f"no frame with id {frame_id}")
        return self.frames[frame_id]

    def insert_frame(self, depth, pose: Pose, k: Intrinsics, rgb_ref=None) -> int:
        """Append a frame and build its subsampled cloud; returns the frame id.

        Depth is quantized to float32, the cache's storage precision, so a
        saved and reloaded cache reproduces clouds bit-exactly. Cloud cell
        (r, c) unprojects source pixel (c*d, r*d) at its center; partial
        blocks at the right/bottom edge when d does not divide the image
        size are dropped.
        """
        if isinstance(depth, DepthMap):
            values = depth.values
        else:
            values = np.asarray(depth, dtype=np.float64)
        if values.shape != (k.height, k.width):
            raise ValueError(
                f"depth shape {values.shape} does not match camera "
                f"{k.height}x{k.width}"
            )
        dm = DepthMap(values.astype(np.float32).astype(np.float64))

        d = self.subsample_d
        hc, wc = k.height // d, k.width // d
        rows = np.arange(hc) * d
        cols = np.arange(wc) * d
        sub = dm.values[np.ix_(rows, cols)]
        valid = dm.validity[np.ix_(rows, cols)]

        uu, vv = np.meshgrid(cols + 0.5, rows + 0.5, indexing="xy")
        uv = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
        zs = np.where(valid, sub, 1.0).reshape(-1)
        pts = unproject_points(uv, zs, pose, k).reshape(hc, wc, 3)
        pts[~valid] = 0.0

        frame_id = len(self.frames)
        self.frames.append(
            FrameRecord(frame_id, k, pose, dm, pts, valid, rgb_ref=rgb_ref)
        )
        if frame_id == 0:
            vals = dm.values[dm.validity]
            self.scene_scale = float(np.median(vals)) if vals.size else 1.0
        return frame_id


def write_depth_raster(path, values: np.ndarray) -> None:
    """Write a 2D raster in the .lyd format (float32, row-major)."""
    v = np.ascontiguousarray(np.asarray(values), dtype="<f4")
    if v.ndim != 2:
        raise ValueError("raster must be 2D")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(v.tobytes())


def read_depth_raster(path) -> np.ndarray:
    """Read a .lyd raster; raises :class:`CacheFormatError` on corruption."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != _MAGIC:
        raise CacheFormatError(f"{path}: not a LYD1 raster")
    w, h = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * w * h
    if len(data) != expected:
        raise CacheFormatError(
            f"{path}: truncated raster (got {len(data)} bytes, want {expected})"
        )
    return np.frombuffer(data[12:], dtype="<f4").reshape(h, w).astype(np.float64)


def _write_png(path, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)


def _read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_cache(cache: SceneCache, path) -> None:
    """Write the cache container directory; overwrites existing files."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    frames = []
    for rec in cache.frames:
        depth_name = f"depth_{rec.frame_id}.lyd"
        write_depth_raster(root / depth_name, rec.depth.values)
        rgb_name = None
        if rec.rgb_ref is not None:
            rgb_name = f"rgb_{rec.frame_id}.png"
            _write_png(root / rgb_name, rec.rgb_ref)
        frames.append(
            {
                "frame_id": rec.frame_id,
                "camera": camera_to_json(rec.pose, rec.intrinsics),
                "depth_file": depth_name,
                "rgb_file": rgb_name,
            }
        )
    manifest = {
        "format": _MANIFEST_FORMAT,
        "version": _MANIFEST_VERSION,
        "subsample_d": cache.subsample_d,
        "scene_scale": cache.scene_scale,
        "frames": frames,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_cache(path) -> SceneCache:
    """Load a cache container; validates format, version, and raster files."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise CacheFormatError(f"{root}: missing manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CacheFormatError(f"{manifest_path}: corrupt manifest: {exc}") from exc
    if manifest.get("format") != _MANIFEST_FORMAT:
        raise CacheFormatError(f"{manifest_path}: unrecognized format field")
    if manifest.get("version") != _MANIFEST_VERSION:
        raise CacheFormatError(
            f"{manifest_path}: unsupported version {manifest.get('version')!r}"
        )

    cache = SceneCache(subsample_d=int(manifest["subsample_d"]))
    for entry in manifest.get("frames", []):
        depth_file = root / entry["depth_file"]
        if not depth_file.is_file():
            raise CacheFormatError(f"manifest lists missing depth file: {depth_file}")
        values = read_depth_raster(depth_file)
        pose, k = camera_from_json(entry["camera"])
        rgb = None
        if entry.get("rgb_file"):
            rgb_path = root / entry["rgb_file"]
            if not rgb_path.is_file():
                raise CacheFormatError(f"manifest lists missing rgb file: {rgb_path}")
            rgb = _read_png(rgb_path)
        fid = cache.insert_frame(values, pose, k, rgb_ref=rgb)
        if fid != entry["frame_id"]:
            raise CacheFormatError(
                f"manifest frame ids must be consecutive from 0, got {entry['frame_id']}"
            )
    stored_scale = manifest.get("scene_scale")
    if stored_scale is not None:
        cache.scene_scale = float(stored_scale)
    return cache
