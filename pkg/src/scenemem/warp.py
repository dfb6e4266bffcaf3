"""Forward warping of canonical coordinate maps and RGB frames.

A source frame's pixels are unprojected with its full-resolution depth,
reprojected into the target camera, and splatted to the single nearest
target pixel under a minimum-depth z-buffer. Warping coordinates instead
of appearance gives the downstream generator dense correspondences with
no disocclusion artifacts baked in; RGB warping is provided for
conditioning-image use and keeps its holes explicit.

Maps are stored as float32 rasters; the .lyc container is magic ``LYC1``,
little-endian u32 width and height, u8 channel count (5), then planar
little-endian float32 planes (u, v, slot, depth, validity as 0/1).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import DepthMap, Intrinsics, Pose

__all__ = [
    "CanonicalCoordMap",
    "WarpedImage",
    "canonical_source_map",
    "forward_warp_coords",
    "forward_warp_rgb",
    "pad_slots",
    "write_coord_map",
    "read_coord_map",
    "coord_map_to_rgb",
]

_LYC_MAGIC = b"LYC1"

# Relative z-buffer tolerance: splats this close to the cell minimum tie,
# and the tie goes to the smallest source pixel index.
Z_TIE_REL = 1e-6


class CanonicalCoordMap:
    """4-channel warped correspondence raster (u, v, slot, depth) + validity.

    Valid pixels carry u, v in [-1, 1], a constant slot scalar, and a
    positive depth; invalid pixels are the all-zero padding sentinel.
    """

    __slots__ = ("channels", "validity")

    def __init__(self, channels, validity):
        ch = np.asarray(channels, dtype=np.float32)
        va = np.asarray(validity, dtype=bool)
        if ch.ndim != 3 or ch.shape[0] != 4:
            raise ValueError("channels must have shape (4, H, W)")
        if va.shape != ch.shape[1:]:
            raise ValueError("validity shape must match raster")
        ch = ch.copy()
        ch[:, ~va] = 0.0
        if va.any():
            uv = ch[0:2, va]
            if np.any(uv < -1.0) or np.any(uv > 1.0):
                raise ValueError("valid u, v must lie in [-1, 1]")
            if np.any(ch[3, va] <= 0):
                raise ValueError("valid warped depth must be positive")
            slots = ch[2, va]
            if slots.max() != slots.min():
                raise ValueError("slot channel must be constant on valid pixels")
        ch.setflags(write=False)
        va = va.copy()
        va.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "validity", va)

    def __setattr__(self, name, value):
        raise AttributeError("CanonicalCoordMap is immutable")

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    @staticmethod
    def empty(height: int, width: int) -> "CanonicalCoordMap":
        """All-invalid padding map (the sentinel for unfilled slots)."""
        return CanonicalCoordMap(
            np.zeros((4, height, width), dtype=np.float32),
            np.zeros((height, width), dtype=bool),
        )


@dataclass(frozen=True)
class WarpedImage:
    """Forward-warped RGB with the pixels nothing landed on flagged."""

    rgb: np.ndarray
    hole_mask: np.ndarray


def canonical_source_map(j: int, n_s: int, height: int, width: int) -> np.ndarray:
    """(u, v, slot) source raster for retrieved-slot ``j`` of ``n_s``.

    u and v are linear in pixel position and span [-1, 1] at the centers
    of the first and last columns/rows; the slot channel is the constant
    ``2*j/n_s - 1``.
    """
    if not 0 <= j < n_s:
        raise ValueError(f"slot index {j} out of range for n_s={n_s}")
    u = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    v = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    out = np.empty((3, height, width), dtype=np.float32)
    out[0] = u[None, :]
    out[1] = v[:, None]
    out[2] = 2.0 * j / n_s - 1.0
    return out


def _relative_transform(pose_src: Pose, pose_tgt: Pose):
    r = pose_tgt.rotation @ pose_src.rotation.T
    t = pose_tgt.translation - r @ pose_src.translation
    return r, t


def _forward_splat(channels, depth_src: DepthMap, pose_src, pose_tgt, k_src, k_tgt):
    """Shared splatting core.

    Returns (out_channels (C, Ht, Wt) float64, out_depth, validity). The
    z-buffer keeps the smallest target depth; splats within Z_TIE_REL of
    the minimum tie and the smallest source pixel index wins, so output
    is independent of iteration order.
    """
    ch = np.asarray(channels)
    if ch.shape[1:] != (depth_src.height, depth_src.width):
        raise ValueError("channel raster does not match source depth size")
    ht, wt = k_tgt.height, k_tgt.width
    out = np.zeros((ch.shape[0], ht, wt))
    out_depth = np.zeros((ht, wt))
    out_valid = np.zeros((ht, wt), dtype=bool)

    src_valid = depth_src.validity
    if not src_valid.any():
        return out, out_depth, out_valid

    # Exact-equality fast path: the mapping is the identity, and taking it
    # literally keeps identity warps bit-exact.
    if pose_src == pose_tgt and k_src == k_tgt:
        out[:, src_valid] = ch[:, src_valid]
        out_depth[src_valid] = depth_src.values[src_valid]
        return out, out_depth, src_valid.copy()

    rows, cols = np.nonzero(src_valid)
    z = depth_src.values[rows, cols]
    xs = (cols + 0.5 - k_src.cx) / k_src.fx * z
    ys = (rows + 0.5 - k_src.cy) / k_src.fy * z
    pc = np.stack([xs, ys, z], axis=1)

    r_rel, t_rel = _relative_transform(pose_src, pose_tgt)
    pt = pc @ r_rel.T + t_rel
    zt = pt[:, 2]
    front = zt > 0
    zsafe = np.where(front, zt, 1.0)
    ut = k_tgt.fx * pt[:, 0] / zsafe + k_tgt.cx
    vt = k_tgt.fy * pt[:, 1] / zsafe + k_tgt.cy
    tc = np.floor(ut).astype(np.int64)
    tr = np.floor(vt).astype(np.int64)
    ok = front & (tc >= 0) & (tc < wt) & (tr >= 0) & (tr < ht)
    if not ok.any():
        return out, out_depth, out_valid

    rows, cols, zt, tc, tr = rows[ok], cols[ok], zt[ok], tc[ok], tr[ok]
    lin = tr * wt + tc
    src_lin = rows * depth_src.width + cols

    zmin = np.full(ht * wt, np.inf)
    np.minimum.at(zmin, lin, zt)
    cand = zt <= zmin[lin] * (1.0 + Z_TIE_REL)

    winner = np.full(ht * wt, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(winner, lin[cand], src_lin[cand])
    win = cand & (src_lin == winner[lin])

    out[:, tr[win], tc[win]] = ch[:, rows[win], cols[win]]
    out_depth[tr[win], tc[win]] = zt[win]
    out_valid[tr[win], tc[win]] = True
    return out, out_depth, out_valid


def forward_warp_coords(
    src_map,
    depth_src: DepthMap,
    pose_src: Pose,
    pose_tgt: Pose,
    k_src: Intrinsics,
    k_tgt: Intrinsics,
    slot_index: int,
    n_slots: int,
) -> CanonicalCoordMap:
    """Warp a canonical (u, v, slot) map into the target view.

    ``src_map`` may be None to build the canonical raster for
    ``slot_index`` internally. The warped target depth becomes the fourth
    channel; target pixels no source pixel reached are the zero sentinel
    with validity 0.
    """
    if src_map is None:
        src_map = canonical_source_map(
            slot_index, n_slots, depth_src.height, depth_src.width
        )
    src_map = np.asarray(src_map)
    if src_map.shape != (3, depth_src.height, depth_src.width):
        raise ValueError("source map must be (3, H, W) matching the depth")
    warped, out_depth, valid = _forward_splat(
        src_map, depth_src, pose_src, pose_tgt, k_src, k_tgt
    )
    channels = np.concatenate([warped, out_depth[None]], axis=0).astype(np.float32)
    return CanonicalCoordMap(channels, valid)


def forward_warp_rgb(
    rgb,
    depth: DepthMap,
    pose_src: Pose,
    pose_tgt: Pose,
    k_src: Intrinsics,
    k_tgt: Intrinsics,
) -> WarpedImage:
    """Forward-warp an RGB frame; unreached target pixels become holes.

    Holes are reported, never inpainted: re-synthesizing disoccluded
    content is the consumer's job.
    """
    img = np.asarray(rgb)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("rgb must be (H, W, 3)")
    if img.shape[:2] != (depth.height, depth.width):
        raise ValueError("rgb size does not match depth")
    planes = np.moveaxis(img.astype(np.float64), 2, 0)
    warped, _, valid = _forward_splat(planes, depth, pose_src, pose_tgt, k_src, k_tgt)
    out = np.moveaxis(warped, 0, 2)
    if np.issubdtype(img.dtype, np.integer):
        out = np.clip(np.rint(out), 0, np.iinfo(img.dtype).max).astype(img.dtype)
    else:
        out = out.astype(img.dtype)
    return WarpedImage(rgb=out, hole_mask=~valid)


def pad_slots(maps, n_s: int, height: int | None = None, width: int | None = None):
    """Pad a retrieved-map list with all-invalid sentinels up to ``n_s``.

    Real maps pass through unchanged and keep their order. When the list
    is empty the raster size must be given explicitly.
    """
    maps = list(maps)
    if len(maps) > n_s:
        raise ValueError(f"got {len(maps)} maps for {n_s} slots")
    if maps:
        height, width = maps[0].height, maps[0].width
    elif height is None or width is None:
        raise ValueError("empty slot list needs an explicit raster size")
    while len(maps) < n_s:
        maps.append(CanonicalCoordMap.empty(height, width))
    return maps


def write_coord_map(path, cmap: CanonicalCoordMap) -> None:
    """Write a correspondence map in the .lyc format."""
    h, w = cmap.height, cmap.width
    with open(path, "wb") as f:
        f.write(_LYC_MAGIC)
        f.write(struct.pack("<IIB", w, h, 5))
        f.write(np.ascontiguousarray(cmap.channels, dtype="<f4").tobytes())
        f.write(cmap.validity.astype("<f4").tobytes())


def read_coord_map(path) -> CanonicalCoordMap:
    """Read a .lyc correspondence map back into memory."""
    data = Path(path).read_bytes()
    if len(data) < 13 or data[:4] != _LYC_MAGIC:
        raise ValueError(f"{path}: not a LYC1 file")
    w, h, nch = struct.unpack("<IIB", data[4:13])
    if nch != 5:
        raise ValueError(f"{path}: expected 5 channels, found {nch}")
    expected = 13 + 4 * 5 * w * h
    if len(data) != expected:
        raise ValueError(f"{path}: truncated (got {len(data)}, want {expected})")
    planes = np.frombuffer(data[13:], dtype="<f4").reshape(5, h, w)
    return CanonicalCoordMap(planes[:4], planes[4] > 0.5)


def coord_map_to_rgb(cmap: CanonicalCoordMap) -> np.ndarray:
    """Map (u, v, slot) to displayable RGB; invalid pixels black."""
    rgb = ((cmap.channels[:3] + 1.0) * 127.5).astype(np.uint8)
    rgb = np.moveaxis(rgb, 0, 2).copy()
    rgb[~cmap.validity] = 0
    return rgb
