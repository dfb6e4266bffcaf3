"""Surface meshing from posed depth via a hierarchical sparse TSDF grid.

Oriented points (depth pixels unprojected, normals from the depth
gradient, flipped toward the camera) are fused into sparse per-level
signed-distance samples; each level is polygonized with standard 256-case
marching cubes over the cells it owns, levels are welded at their seams,
and the result can be decimated with quadric edge collapse.

Level ownership is by distance to the nearest recorded camera center:
closer than ``near_radius`` belongs to the finest level, then each level
owns a doubling distance band, with the coarsest level taking everything
beyond. Lattice sample points sit at integer multiples of the level voxel
size, so coarser lattices are nested in finer ones and seams between
levels can weld exactly.
"""

from __future__ import annotations

import heapq
import struct
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .geometry import DepthMap, Intrinsics, Pose, unproject_points

__all__ = [
    "OrientedPointSet",
    "HierGrid",
    "TriMesh",
    "depth_to_oriented_points",
    "build_grid",
    "fuse_sdf",
    "marching_cubes",
    "stitch_levels",
    "decimate",
    "point_mesh_distance",
    "hausdorff_distance",
    "save_obj",
    "save_ply",
    "read_obj",
    "read_ply",
]

TRUNCATION_VOXELS = 3.0

_PACK_BITS = 21
_PACK_OFF = 1 << (_PACK_BITS - 1)


def _pack(keys: np.ndarray) -> np.ndarray:
    k = keys.astype(np.int64) + _PACK_OFF
    if np.any(k < 0) or np.any(k >= (1 << _PACK_BITS)):
        raise ValueError("voxel index out of packable range")
    return (k[:, 0] << (2 * _PACK_BITS)) | (k[:, 1] << _PACK_BITS) | k[:, 2]


def _unpack(packed: np.ndarray) -> np.ndarray:
    mask = (1 << _PACK_BITS) - 1
    out = np.empty((packed.shape[0], 3), dtype=np.int64)
    out[:, 0] = (packed >> (2 * _PACK_BITS)) & mask
    out[:, 1] = (packed >> _PACK_BITS) & mask
    out[:, 2] = packed & mask
    return out - _PACK_OFF


_EDGE_BITS = 20
_EDGE_OFF = 1 << (_EDGE_BITS - 1)


def _pack_edge(points: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Unique id for a lattice edge (lower endpoint + axis), 62 bits."""
    k = points.astype(np.int64) + _EDGE_OFF
    if np.any(k < 0) or np.any(k >= (1 << _EDGE_BITS)):
        raise ValueError("lattice edge out of packable range")
    return (
        (((k[:, 0] << _EDGE_BITS) | k[:, 1]) << _EDGE_BITS | k[:, 2]) << 2
    ) | axis


class OrientedPointSet:
    """World points with unit normals oriented toward the observing camera."""

    __slots__ = ("points", "normals")

    def __init__(self, points, normals):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        if p.shape != n.shape:
            raise ValueError("points and normals must match")
        if p.shape[0]:
            lens = np.linalg.norm(n, axis=1)
            if np.any(np.abs(lens - 1.0) > 1e-6):
                raise ValueError("normals must be unit length")
        self.points = p
        self.normals = n

    def __len__(self):
        return self.points.shape[0]


def depth_to_oriented_points(
    depth: DepthMap, pose: Pose, k: Intrinsics, stride: int = 1
) -> OrientedPointSet:
    """Unproject every stride-th valid pixel with a depth-gradient normal.

    Normals come from central differences of the unprojected surface and
    are flipped toward the camera; pixels whose 4-neighborhood contains an
    invalid depth are skipped.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = depth.height, depth.width
    if (h, w) != (k.height, k.width):
        raise ValueError("depth size does not match camera")
    if h < 3 or w < 3 or not depth.validity.any():
        return OrientedPointSet(np.zeros((0, 3)), np.zeros((0, 3)))

    uu = np.arange(w, dtype=np.float64) + 0.5
    vv = np.arange(h, dtype=np.float64) + 0.5
    gu, gv = np.meshgrid(uu, vv)
    flat_uv = np.stack([gu.reshape(-1), gv.reshape(-1)], axis=1)
    zs = np.where(depth.validity, depth.values, 1.0).reshape(-1)
    pts = unproject_points(flat_uv, zs, pose, k).reshape(h, w, 3)

    rows = np.arange(1, h - 1, stride)
    cols = np.arange(1, w - 1, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr = rr.reshape(-1)
    cc = cc.reshape(-1)
    val = depth.validity
    ok = (
        val[rr, cc]
        & val[rr, cc - 1]
        & val[rr, cc + 1]
        & val[rr - 1, cc]
        & val[rr + 1, cc]
    )
    rr, cc = rr[ok], cc[ok]
    if rr.size == 0:
        return OrientedPointSet(np.zeros((0, 3)), np.zeros((0, 3)))

    du = pts[rr, cc + 1] - pts[rr, cc - 1]
    dv = pts[rr + 1, cc] - pts[rr - 1, cc]
    n = np.cross(du, dv)
    lens = np.linalg.norm(n, axis=1)
    good = lens > 1e-12
    rr, cc, n, lens = rr[good], cc[good], n[good], lens[good]
    n = n / lens[:, None]
    p = pts[rr, cc]
    to_cam = pose.camera_center() - p
    flip = np.einsum("ij,ij->i", n, to_cam) < 0
    n[flip] = -n[flip]
    return OrientedPointSet(p, n)


class HierGrid:
    """Sparse multi-level TSDF samples around observed surfaces.

    Signed distances accumulate as (sum, count) pairs per lattice point so
    repeated fusion averages observations with equal weight. Samples are
    kept wherever points land, at every level; the level-ownership
    partition is applied when extracting, so neighboring levels always
    have complete corner data at their seam.
    """

    def __init__(self, camera_centers, near_radius: float, level_sizes):
        centers = np.asarray(camera_centers, dtype=np.float64).reshape(-1, 3)
        if centers.shape[0] == 0:
            raise ValueError("grid needs at least one camera")
        sizes = tuple(float(s) for s in level_sizes)
        if not sizes:
            raise ValueError("grid needs at least one level")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("level sizes must be strictly increasing")
        if near_radius <= 0:
            raise ValueError("near_radius must be positive")
        self.camera_centers = centers
        self.near_radius = float(near_radius)
        self.level_sizes = sizes
        self._acc = [{"packed": [], "s": []} for _ in sizes]
        self._final: list = [None] * len(sizes)

    @property
    def num_levels(self) -> int:
        return len(self.level_sizes)

    def truncation(self, level: int) -> float:
        return TRUNCATION_VOXELS * self.level_sizes[level]

    def ownership(self, points: np.ndarray) -> np.ndarray:
        """Owning level per point: doubling distance bands from the cameras."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d2 = ((p[:, None, :] - self.camera_centers[None, :, :]) ** 2).sum(axis=2)
        dist = np.sqrt(d2.min(axis=1))
        level = np.zeros(p.shape[0], dtype=np.int64)
        far = dist >= self.near_radius
        with np.errstate(divide="ignore"):
            bands = np.floor(np.log2(np.where(far, dist / self.near_radius, 1.0)))
        level[far] = 1 + bands[far].astype(np.int64)
        return np.minimum(level, self.num_levels - 1)

    def _accumulate(self, level: int, packed: np.ndarray, s: np.ndarray) -> None:
        self._acc[level]["packed"].append(packed)
        self._acc[level]["s"].append(s)
        self._final[level] = None

    def add_samples(self, level: int, keys: np.ndarray, values: np.ndarray) -> None:
        """Inject signed-distance observations directly.

        ``keys`` are integer lattice indices (sample point = key * voxel
        size); each (key, value) pair counts as one observation in the
        running average. Analytic SDFs enter the grid this way.
        """
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if keys.shape[0] != values.shape[0]:
            raise ValueError("keys and values must pair up")
        self._accumulate(level, _pack(keys), values)

    def level_samples(self, level: int):
        """Finalized (sorted packed keys, mean SDF values) for one level."""
        if self._final[level] is None:
            packs = self._acc[level]["packed"]
            if not packs:
                self._final[level] = (
                    np.zeros(0, dtype=np.int64),
                    np.zeros(0),
                )
            else:
                packed = np.concatenate(packs)
                svals = np.concatenate(self._acc[level]["s"])
                uniq, inverse = np.unique(packed, return_inverse=True)
                sums = np.bincount(inverse, weights=svals)
                counts = np.bincount(inverse)
                self._final[level] = (uniq, sums / counts)
        return self._final[level]


def build_grid(cameras, near_radius: float, level_sizes) -> HierGrid:
    """Create an empty grid whose fine levels hug the given viewpoints."""
    centers = [pose.camera_center() for pose, _k in cameras]
    if not centers:
        raise ValueError("grid needs at least one camera")
    return HierGrid(np.stack(centers), near_radius, level_sizes)


_BALL_OFFSETS: dict[float, np.ndarray] = {}


def _ball_offsets(radius_voxels: float) -> np.ndarray:
    key = round(radius_voxels, 6)
    if key not in _BALL_OFFSETS:
        r = int(np.ceil(radius_voxels))
        axis = np.arange(-r, r + 1)
        ox, oy, oz = np.meshgrid(axis, axis, axis, indexing="ij")
        offs = np.stack([ox.reshape(-1), oy.reshape(-1), oz.reshape(-1)], axis=1)
        keep = (offs**2).sum(axis=1) <= radius_voxels**2
        _BALL_OFFSETS[key] = offs[keep].astype(np.int64)
    return _BALL_OFFSETS[key]


def fuse_sdf(grid: HierGrid, points: OrientedPointSet) -> HierGrid:
    """Fuse one oriented point set into every level of the grid.

    Each lattice point within the level truncation (3 voxels) of an
    observed point receives the signed point-to-plane distance to it,
    positive on the camera side of the surface; contributions average
    with equal weight across points and calls.
    """
    if len(points) == 0:
        return grid
    p = points.points
    n = points.normals
    for level, size in enumerate(grid.level_sizes):
        trunc = grid.truncation(level)
        base = np.round(p / size).astype(np.int64)
        frac = base * size - p  # lattice-snap residual, |frac| <= size/2
        offsets = _ball_offsets(TRUNCATION_VOXELS + 0.5)
        packed_chunks = []
        s_chunks = []
        for off in offsets:
            delta = frac + off * size
            d2 = np.einsum("ij,ij->i", delta, delta)
            keep = d2 <= trunc * trunc
            if not keep.any():
                continue
            s = np.einsum("ij,ij->i", n[keep], delta[keep])
            packed_chunks.append(_pack(base[keep] + off))
            s_chunks.append(s)
        if packed_chunks:
            grid._accumulate(
                level, np.concatenate(packed_chunks), np.concatenate(s_chunks)
            )
    return grid


class TriMesh:
    """Indexed triangle mesh in world coordinates."""

    __slots__ = ("vertices", "triangles")

    def __init__(self, vertices, triangles):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise ValueError("triangle indices out of range")
        self.vertices = v
        self.triangles = t

    @property
    def face_count(self) -> int:
        return self.triangles.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def cleaned(self) -> "TriMesh":
        """Drop degenerate triangles (repeated indices or zero area) and
        compact away unused vertices."""
        t = self.triangles
        if t.size == 0:
            return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        distinct = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        t = t[distinct]
        mesh = TriMesh(self.vertices, t)
        t = t[mesh.face_areas() > 1e-12]
        used = np.unique(t)
        remap = np.full(self.vertex_count, -1, dtype=np.int64)
        remap[used] = np.arange(used.shape[0])
        return TriMesh(self.vertices[used], remap[t])

    def edges(self) -> np.ndarray:
        """Unique undirected edges, shape (E, 2)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def boundary_vertices(self) -> np.ndarray:
        """Indices of vertices on edges used by exactly one triangle."""
        t = self.triangles
        if t.size == 0:
            return np.zeros(0, dtype=np.int64)
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
        e = np.sort(e, axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return np.unique(uniq[counts == 1])

    def boundary_edges(self) -> np.ndarray:
        t = self.triangles
        if t.size == 0:
            return np.zeros((0, 2), dtype=np.int64)
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
        e = np.sort(e, axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    def euler_characteristic(self) -> int:
        return self.vertex_count - self.edges().shape[0] + self.face_count


_EDGE_MIN_POINT = []
_EDGE_AXIS = []
for _a, _b in EDGE_CORNERS:
    _pa = np.array(CORNER_OFFSETS[_a])
    _pb = np.array(CORNER_OFFSETS[_b])
    _ax = int(np.nonzero(_pa != _pb)[0][0])
    _EDGE_MIN_POINT.append(np.minimum(_pa, _pb))
    _EDGE_AXIS.append(_ax)
_EDGE_MIN_POINT = np.stack(_EDGE_MIN_POINT)
_EDGE_AXIS = np.array(_EDGE_AXIS, dtype=np.int64)
_TRI_TABLE_ARR = np.array(TRI_TABLE, dtype=np.int64)
_CORNER_OFFSETS_ARR = np.array(CORNER_OFFSETS, dtype=np.int64)


def marching_cubes(grid: HierGrid, level: int, apply_ownership: bool = True) -> TriMesh:
    """Polygonize one level's zero crossing.

    Only cubes with all 8 corner samples defined contribute; vertices are
    linearly interpolated on cube edges and shared between neighboring
    cubes. With ``apply_ownership`` (the default) a cube is meshed only if
    its center falls in the band this level owns, so per-level meshes
    partition space cleanly.
    """
    packed, vals = grid.level_samples(level)
    if packed.shape[0] == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    size = grid.level_sizes[level]
    keys = _unpack(packed)

    corner_idx = np.empty((packed.shape[0], 8), dtype=np.int64)
    complete = np.ones(packed.shape[0], dtype=bool)
    for ci in range(8):
        neighbor = _pack(keys + _CORNER_OFFSETS_ARR[ci])
        pos = np.searchsorted(packed, neighbor)
        pos = np.clip(pos, 0, packed.shape[0] - 1)
        found = packed[pos] == neighbor
        complete &= found
        corner_idx[:, ci] = pos

    if apply_ownership and complete.any():
        centers = (keys + 0.5) * size
        owned = grid.ownership(centers) == level
        if level > 0:
            # Coarse levels also claim seam cubes any of whose octants they
            # own; for doubling sizes the octant centers coincide with the
            # finer level's cube centers, making coverage complementary.
            for ox in (0.25, 0.75):
                for oy in (0.25, 0.75):
                    for oz in (0.25, 0.75):
                        octant = (keys + np.array([ox, oy, oz])) * size
                        owned |= grid.ownership(octant) == level
        complete &= owned

    base_keys = keys[complete]
    cidx = corner_idx[complete]
    if base_keys.shape[0] == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    cvals = vals[cidx]  # (N, 8)
    case = ((cvals < 0) << np.arange(8)).sum(axis=1).astype(np.int64)
    active = (case != 0) & (case != 255)
    base_keys, cvals, case = base_keys[active], cvals[active], case[active]
    if base_keys.shape[0] == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    tri_edges = _TRI_TABLE_ARR[case][:, :15].reshape(-1, 5, 3)  # (N, 5, 3)
    tri_valid = tri_edges[:, :, 0] >= 0  # (N, 5)
    cube_of_tri, slot_of_tri = np.nonzero(tri_valid)
    edges = tri_edges[cube_of_tri, slot_of_tri]  # (T, 3) edge ids
    n_tris = edges.shape[0]

    flat_cube = np.repeat(cube_of_tri, 3)
    flat_edge = edges.reshape(-1)

    lower = base_keys[flat_cube] + _EDGE_MIN_POINT[flat_edge]
    axis = _EDGE_AXIS[flat_edge]
    edge_key = _pack_edge(lower, axis)

    # One interpolated vertex per distinct lattice edge, shared by all
    # triangles referencing it; the first referencing cube computes it.
    uniq_keys, inverse = np.unique(edge_key, return_inverse=True)
    rep = np.full(uniq_keys.shape[0], np.iinfo(np.int64).max)
    np.minimum.at(rep, inverse, np.arange(inverse.shape[0]))

    owner_cube = flat_cube[rep]
    edge_ids = flat_edge[rep]
    ca = np.array([e[0] for e in EDGE_CORNERS], dtype=np.int64)
    cb = np.array([e[1] for e in EDGE_CORNERS], dtype=np.int64)
    vala = cvals[owner_cube, ca[edge_ids]]
    valb = cvals[owner_cube, cb[edge_ids]]
    pa = (base_keys[owner_cube] + _CORNER_OFFSETS_ARR[ca[edge_ids]]) * size
    pb = (base_keys[owner_cube] + _CORNER_OFFSETS_ARR[cb[edge_ids]]) * size
    t = vala / (vala - valb)
    verts = pa + t[:, None] * (pb - pa)

    tris = inverse.reshape(n_tris, 3)
    # Corners sitting exactly on the isosurface put several edge vertices
    # on the same lattice point; welding those first turns the resulting
    # slivers into index-degenerate triangles whose removal keeps the
    # surface closed.
    verts, remap = np.unique(verts, axis=0, return_inverse=True)
    return TriMesh(verts, remap[tris]).cleaned()


def stitch_levels(meshes, grid: HierGrid) -> TriMesh:
    """Weld per-level meshes into one surface.

    Boundary vertices of the finer mesh within half a fine voxel of a
    coarser boundary vertex are merged onto it; remaining fine boundary
    vertices within one fine voxel of a coarse boundary edge are snapped
    onto that edge. Levels with no shared boundary simply concatenate.
    """
    live = [(i, m) for i, m in enumerate(meshes) if m.face_count > 0]
    if not live:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    if len(live) == 1:
        return live[0][1]

    verts = []
    tris = []
    offsets = {}
    total = 0
    for lvl, m in live:
        offsets[lvl] = total
        verts.append(m.vertices)
        tris.append(m.triangles + total)
        total += m.vertex_count
    verts = np.concatenate(verts)
    tris = np.concatenate(tris)
    remap = np.arange(total)

    for (fine_lvl, fine_mesh), (coarse_lvl, coarse_mesh) in zip(live, live[1:]):
        tol_weld = 0.5 * grid.level_sizes[fine_lvl]
        tol_snap = 1.5 * grid.level_sizes[fine_lvl]
        fb = fine_mesh.boundary_vertices()
        cb = coarse_mesh.boundary_vertices()
        if fb.size == 0 or cb.size == 0:
            continue
        f_global = fb + offsets[fine_lvl]
        c_global = cb + offsets[coarse_lvl]
        tree = cKDTree(verts[c_global])
        dist, nearest = tree.query(verts[f_global])
        welded = dist <= tol_weld
        remap[f_global[welded]] = c_global[nearest[welded]]

        # Snap leftover fine boundary vertices onto coarse boundary edges.
        leftover = f_global[~welded]
        c_edges = coarse_mesh.boundary_edges()
        if leftover.size and c_edges.size:
            a = verts[c_edges[:, 0] + offsets[coarse_lvl]]
            b = verts[c_edges[:, 1] + offsets[coarse_lvl]]
            ab = b - a
            denom = np.einsum("ij,ij->i", ab, ab)
            denom = np.where(denom > 0, denom, 1.0)
            for vid in leftover:
                p = verts[vid]
                proj_t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, ab) / denom, 0.0, 1.0)
                closest = a + proj_t[:, None] * ab
                dd = np.linalg.norm(closest - p[None, :], axis=1)
                best = int(dd.argmin())
                if dd[best] <= tol_snap:
                    verts[vid] = closest[best]

    tris = remap[tris]
    return TriMesh(verts, tris).cleaned()


def _plane_quadric(a, b, c):
    n = np.cross(b - a, c - a)
    ln = np.linalg.norm(n)
    if ln < 1e-15:
        return np.zeros((4, 4))
    n = n / ln
    d = -float(n @ a)
    p = np.array([n[0], n[1], n[2], d])
    return np.outer(p, p)


def _quadric_cost(q, x, y, z):
    return (
        q[0, 0] * x * x
        + q[1, 1] * y * y
        + q[2, 2] * z * z
        + 2.0 * (q[0, 1] * x * y + q[0, 2] * x * z + q[1, 2] * y * z)
        + 2.0 * (q[0, 3] * x + q[1, 3] * y + q[2, 3] * z)
        + q[3, 3]
    )


def _optimal_point(q, va, vb):
    # Cramer solve of the 3x3 system grad = 0; falls back to the best of
    # midpoint/endpoints when the quadric is singular (flat neighborhoods).
    a00, a01, a02 = q[0, 0], q[0, 1], q[0, 2]
    a11, a12, a22 = q[1, 1], q[1, 2], q[2, 2]
    b0, b1, b2 = -q[0, 3], -q[1, 3], -q[2, 3]
    det = (
        a00 * (a11 * a22 - a12 * a12)
        - a01 * (a01 * a22 - a12 * a02)
        + a02 * (a01 * a12 - a11 * a02)
    )
    if abs(det) > 1e-12:
        x = (
            b0 * (a11 * a22 - a12 * a12)
            - a01 * (b1 * a22 - a12 * b2)
            + a02 * (b1 * a12 - a11 * b2)
        ) / det
        y = (
            a00 * (b1 * a22 - a12 * b2)
            - b0 * (a01 * a22 - a12 * a02)
            + a02 * (a01 * b2 - b1 * a02)
        ) / det
        z = (
            a00 * (a11 * b2 - b1 * a12)
            - a01 * (a01 * b2 - b1 * a02)
            + b0 * (a01 * a12 - a11 * a02)
        ) / det
        return (x, y, z), _quadric_cost(q, x, y, z)
    best_v, best_c = None, np.inf
    for cand in ((va + vb) / 2.0, va, vb):
        c = _quadric_cost(q, cand[0], cand[1], cand[2])
        if c < best_c:
            best_v, best_c = (float(cand[0]), float(cand[1]), float(cand[2])), c
    return best_v, best_c


def decimate(mesh: TriMesh, target_faces: int) -> TriMesh:
    """Quadric edge-collapse decimation down to at most ``target_faces``.

    Collapses are ordered by quadric error with ties broken by vertex
    index, and a collapse that would flip a surviving face normal is
    skipped, keeping the result close to the input surface. Inputs already
    at or below the target come back unchanged.
    """
    if target_faces < 4:
        raise ValueError("target_faces must be >= 4")
    if mesh.face_count <= target_faces:
        return mesh

    verts = mesh.vertices.copy()
    faces = {i: tuple(int(x) for x in t) for i, t in enumerate(mesh.triangles)}
    vert_faces: dict[int, set] = {i: set() for i in range(mesh.vertex_count)}
    neighbors: dict[int, set] = {i: set() for i in range(mesh.vertex_count)}
    quadrics = np.zeros((mesh.vertex_count, 4, 4))
    for fid, (a, b, c) in faces.items():
        vert_faces[a].add(fid)
        vert_faces[b].add(fid)
        vert_faces[c].add(fid)
        neighbors[a].update((b, c))
        neighbors[b].update((a, c))
        neighbors[c].update((a, b))
        kq = _plane_quadric(verts[a], verts[b], verts[c])
        quadrics[a] += kq
        quadrics[b] += kq
        quadrics[c] += kq

    stamp = [0] * mesh.vertex_count
    heap: list = []

    def push_edge(u, v):
        if u > v:
            u, v = v, u
        q = quadrics[u] + quadrics[v]
        pos, cost = _optimal_point(q, verts[u], verts[v])
        heapq.heappush(heap, (cost, u, v, stamp[u], stamp[v], pos))

    for u, nbrs in neighbors.items():
        for v in nbrs:
            if u < v:
                push_edge(u, v)

    alive_faces = len(faces)

    def would_flip(keep, drop, nx, ny, nz):
        for fid in vert_faces[keep] | vert_faces[drop]:
            tri = faces[fid]
            if keep in tri and drop in tri:
                continue
            p = [None, None, None]
            for i, vv in enumerate(tri):
                if vv == keep or vv == drop:
                    p[i] = (nx, ny, nz)
                else:
                    row = verts[vv]
                    p[i] = (row[0], row[1], row[2])
            # normals before and after the move
            r0 = verts[tri[0]]
            r1 = verts[tri[1]]
            r2 = verts[tri[2]]
            b1x, b1y, b1z = r1[0] - r0[0], r1[1] - r0[1], r1[2] - r0[2]
            b2x, b2y, b2z = r2[0] - r0[0], r2[1] - r0[1], r2[2] - r0[2]
            n0x = b1y * b2z - b1z * b2y
            n0y = b1z * b2x - b1x * b2z
            n0z = b1x * b2y - b1y * b2x
            a1x, a1y, a1z = p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]
            a2x, a2y, a2z = p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]
            n1x = a1y * a2z - a1z * a2y
            n1y = a1z * a2x - a1x * a2z
            n1z = a1x * a2y - a1y * a2x
            if n1x * n1x + n1y * n1y + n1z * n1z < 1e-30:
                return True
            if n0x * n1x + n0y * n1y + n0z * n1z < 0.0:
                return True
        return False

    while alive_faces > target_faces and heap:
        cost, u, v, su, sv, pos = heapq.heappop(heap)
        if stamp[u] != su or stamp[v] != sv or v not in neighbors[u]:
            continue
        shared = vert_faces[u] & vert_faces[v]
        if not shared:
            neighbors[u].discard(v)
            neighbors[v].discard(u)
            continue
        if would_flip(u, v, pos[0], pos[1], pos[2]):
            # Permanently retire this candidate; neighborhood changes will
            # re-propose it with fresh stamps if it becomes viable.
            continue

        # Collapse v into u.
        verts[u] = pos
        quadrics[u] += quadrics[v]
        for fid in shared:
            a, b, c = faces.pop(fid)
            alive_faces -= 1
            vert_faces[a].discard(fid)
            vert_faces[b].discard(fid)
            vert_faces[c].discard(fid)
        for fid in list(vert_faces[v]):
            tri = faces[fid]
            faces[fid] = tuple(u if x == v else x for x in tri)
            vert_faces[u].add(fid)
        vert_faces[v].clear()
        neighbors[u].discard(v)
        for w in neighbors[v]:
            neighbors[w].discard(v)
            if w != u:
                neighbors[w].add(u)
                neighbors[u].add(w)
        neighbors[v].clear()
        stamp[u] += 1
        stamp[v] += 1
        for w in neighbors[u]:
            push_edge(u, w)

    out_faces = (
        np.array(sorted(faces.values()), dtype=np.int64)
        if faces
        else np.zeros((0, 3), dtype=np.int64)
    )
    return TriMesh(verts, out_faces).cleaned()


def point_mesh_distance(points: np.ndarray, mesh: TriMesh, k_candidates: int = 48) -> np.ndarray:
    """Distance from each point to the mesh surface.

    Candidate triangles come from a centroid KD-tree, then exact
    point-to-triangle distances are evaluated on them.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if mesh.face_count == 0:
        return np.full(p.shape[0], np.inf)
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    centroids = (a + b + c) / 3.0
    kq = min(k_candidates, mesh.face_count)
    tree = cKDTree(centroids)
    _, idx = tree.query(p, k=kq)
    idx = np.atleast_2d(idx)
    out = np.empty(p.shape[0])
    for i in range(p.shape[0]):
        out[i] = _point_tris_min_distance(p[i], a[idx[i]], b[idx[i]], c[idx[i]])
    return out


def _point_tris_min_distance(p, a, b, c):
    # Ericson's closest-point-on-triangle, vectorized over triangles.
    ab = b - a
    ac = c - a
    ap = p[None, :] - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p[None, :] - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p[None, :] - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(a)
    done = np.zeros(a.shape[0], dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a[m]
    done |= m
    m = (~done) & (d3 >= 0) & (d4 <= d3)
    closest[m] = b[m]
    done |= m
    vc = d1 * d4 - d3 * d2
    m = (~done) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    denom = np.where(d1 - d3 != 0, d1 - d3, 1.0)
    t = d1 / denom
    closest[m] = a[m] + t[m, None] * ab[m]
    done |= m
    m = (~done) & (d6 >= 0) & (d5 <= d6)
    closest[m] = c[m]
    done |= m
    vb = d5 * d2 - d1 * d6
    m = (~done) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    denom = np.where(d2 - d6 != 0, d2 - d6, 1.0)
    t = d2 / denom
    closest[m] = a[m] + t[m, None] * ac[m]
    done |= m
    va = d3 * d6 - d5 * d4
    m = (~done) & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    denom = np.where((d4 - d3) + (d5 - d6) != 0, (d4 - d3) + (d5 - d6), 1.0)
    t = (d4 - d3) / denom
    closest[m] = b[m] + t[m, None] * (c[m] - b[m])
    done |= m
    m = ~done
    denom = np.where(va + vb + vc != 0, va + vb + vc, 1.0)
    v = vb / denom
    w = vc / denom
    closest[m] = a[m] + v[m, None] * ab[m] + w[m, None] * ac[m]
    return float(np.linalg.norm(closest - p[None, :], axis=1).min())


def hausdorff_distance(mesh_a: TriMesh, mesh_b: TriMesh) -> float:
    """Symmetric vertex-sampled Hausdorff distance between two meshes."""
    da = point_mesh_distance(mesh_a.vertices, mesh_b).max()
    db = point_mesh_distance(mesh_b.vertices, mesh_a).max()
    return float(max(da, db))


def save_obj(path, mesh: TriMesh) -> None:
    """ASCII OBJ export (v/f lines, 1-based indices)."""
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def read_obj(path) -> TriMesh:
    verts = []
    tris = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def save_ply(path, mesh: TriMesh) -> None:
    """Binary little-endian PLY export."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.vertex_count}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.face_count}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(mesh.vertices.astype("<f4").tobytes())
        for t in mesh.triangles:
            f.write(struct.pack("<Biii", 3, int(t[0]), int(t[1]), int(t[2])))


def read_ply(path) -> TriMesh:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    nv = nf = 0
    for line in header:
        if line.startswith("element vertex"):
            nv = int(line.split()[-1])
        elif line.startswith("element face"):
            nf = int(line.split()[-1])
    body = data[end + len(b"end_header\n") :]
    verts = np.frombuffer(body[: 12 * nv], dtype="<f4").reshape(nv, 3).astype(np.float64)
    tris = np.empty((nf, 3), dtype=np.int64)
    off = 12 * nv
    for i in range(nf):
        cnt = body[off]
        if cnt != 3:
            raise ValueError("only triangle PLY faces supported")
        tris[i] = struct.unpack_from("<iii", body, off + 1)
        off += 13
    return TriMesh(verts, tris)
