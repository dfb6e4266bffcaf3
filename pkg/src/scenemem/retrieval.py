"""Geometry-aware retrieval of history frames for a target camera.

Every cached frame's downsampled point cloud is splatted into a coarse
grid over the target image plane; a shared minimum-depth buffer handles
occlusion, and the per-frame counts of surviving points are the
visibility scores. Frame selection is either greedy maximum coverage
(inference) or proportional sampling (training).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cache import SceneCache
from .geometry import Intrinsics, Pose

__all__ = [
    "RetrievalConfig",
    "VisibilityResult",
    "visibility",
    "select_frames_greedy",
    "greedy_from_visibility",
    "sample_frames_train",
    "coverage_fraction",
]

# Pooled clouds larger than this are split across two splatting threads;
# results are identical either way (min-merge and mask scatter commute).
CHUNK_THRESHOLD = 500_000


@dataclass(frozen=True)
class RetrievalConfig:
    """Retrieval knobs; defaults follow the engine-wide constants."""

    n_s: int = 5
    delta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_s < 1:
            raise ValueError("n_s must be >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


class VisibilityResult:
    """Per-frame visibility against one target camera.

    Attributes:
        grid_shape: (rows, cols) of the target cell grid.
        min_depth: per-cell minimum normalized depth over all frames
            (inf where no point landed).
        per_frame_mask: (F, rows, cols) bool, the cells each frame covers
            with visible points.
        phi: (F,) visible-point count per frame.
        scene_scale: normalization constant the depths were divided by.
    """

    __slots__ = ("grid_shape", "min_depth", "per_frame_mask", "phi", "scene_scale")

    def __init__(self, grid_shape, min_depth, per_frame_mask, phi, scene_scale):
        self.grid_shape = grid_shape
        self.min_depth = min_depth
        self.per_frame_mask = per_frame_mask
        self.phi = phi
        self.scene_scale = scene_scale

    def frame_count(self) -> int:
        return self.phi.shape[0]

    def any_coverage(self) -> np.ndarray:
        """Cells covered by at least one candidate frame."""
        return self.per_frame_mask.any(axis=0)


def visibility(
    cache: SceneCache, target_pose: Pose, target_k: Intrinsics, cfg: RetrievalConfig
) -> VisibilityResult:
    """Score every cached frame against the target camera.

    Two passes: all frames' cloud points are first splatted into the
    target cell grid keeping the per-cell minimum normalized depth, then a
    point counts as visible iff it is in the frustum, in front of the
    camera, and within ``cfg.delta`` of the cell minimum (normalized by
    the cache's scene scale). A point alone in its cell is its own
    minimum, hence visible.
    """
    if cache.frame_count() == 0:
        raise ValueError("cache is empty")
    d = cache.subsample_d
    rows = -(-target_k.height // d)
    cols = -(-target_k.width // d)
    scale = cache.scene_scale if cache.scene_scale else 1.0
    n_frames = cache.frame_count()
    min_depth = np.full((rows, cols), np.inf)
    phi = np.zeros(n_frames, dtype=np.int64)
    masks = np.zeros((n_frames, rows, cols), dtype=bool)

    pts, frame_idx = cache.pooled_points()
    if pts.shape[0] == 0:
        return VisibilityResult((rows, cols), min_depth, masks, phi, scale)

    # Splat pass over every frame's points: a homogeneous matmul into
    # (3, N) row-contiguous channels, in-place projection, then scatter
    # reductions. float32 is plenty for cell binning and the delta test.
    # Large caches are chunked across threads; the min-buffer merge and
    # True-only mask scatter keep the result independent of scheduling.
    m = np.concatenate(
        [target_pose.rotation, target_pose.translation[:, None]], axis=1
    ).astype(np.float32)

    def splat(lo, hi):
        pc = m @ pts[lo:hi].T
        u, v, z = pc[0], pc[1], pc[2]
        # Division by z <= 0 yields inf/nan, which the bounds test rejects.
        with np.errstate(divide="ignore", invalid="ignore"):
            u /= z
            v /= z
        u *= np.float32(target_k.fx)
        u += np.float32(target_k.cx)
        v *= np.float32(target_k.fy)
        v += np.float32(target_k.cy)
        ok = (z > 0) & (u >= 0) & (u < target_k.width) & (v >= 0) & (v < target_k.height)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            return None
        lin = (v.take(idx).astype(np.int32) // d) * cols + u.take(idx).astype(np.int32) // d
        zn = z.take(idx)
        zn /= np.float32(scale)
        local_min = np.full(rows * cols, np.inf, dtype=np.float32)
        np.minimum.at(local_min, lin, zn)
        return lin, zn, frame_idx.take(idx + lo), local_min

    n = pts.shape[0]
    n_workers = 2 if n > CHUNK_THRESHOLD else 1
    bounds = [(i * n // n_workers, (i + 1) * n // n_workers) for i in range(n_workers)]
    if n_workers == 1:
        chunks = [splat(*bounds[0])]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(n_workers) as pool:
            chunks = list(pool.map(lambda b: splat(*b), bounds))
    chunks = [c for c in chunks if c is not None]
    if not chunks:
        return VisibilityResult((rows, cols), min_depth, masks, phi, scale)

    flat_min = chunks[0][3]
    for c in chunks[1:]:
        np.minimum(flat_min, c[3], out=flat_min)

    delta32 = np.float32(cfg.delta)
    masks_flat = masks.reshape(n_frames * rows * cols)

    def classify(chunk):
        lin, zn, fidx, _ = chunk
        vis = (zn - flat_min.take(lin)) < delta32
        counts = np.bincount(fidx, weights=vis, minlength=n_frames)
        sel = np.flatnonzero(vis)
        masks_flat[fidx.take(sel).astype(np.int64) * (rows * cols) + lin.take(sel)] = True
        return counts

    if n_workers == 1:
        totals = [classify(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            totals = list(pool.map(classify, chunks))
    phi[:] = np.sum(totals, axis=0).astype(np.int64)
    min_depth[:] = flat_min.reshape(rows, cols)
    return VisibilityResult((rows, cols), min_depth, masks, phi, scale)


def greedy_from_visibility(vis: VisibilityResult, n_s: int) -> list[int]:
    """Greedy max-coverage selection over precomputed coverage masks.

    Each round picks the frame covering the most not-yet-covered cells,
    ties broken by lowest frame id; stops early once no frame adds a new
    cell.
    """
    covered = np.zeros(vis.grid_shape, dtype=bool)
    remaining = list(range(vis.frame_count()))
    selected: list[int] = []
    while remaining and len(selected) < n_s:
        gains = np.array(
            [int((vis.per_frame_mask[i] & ~covered).sum()) for i in remaining]
        )
        best = int(gains.argmax())
        if gains[best] == 0:
            break
        frame_id = remaining[best]
        selected.append(frame_id)
        covered |= vis.per_frame_mask[frame_id]
        remaining.pop(best)
    return selected


def select_frames_greedy(
    cache: SceneCache, target_pose: Pose, target_k: Intrinsics, cfg: RetrievalConfig
) -> list[int]:
    """Greedy max-coverage frame ids (at most ``cfg.n_s``); [] on empty cache."""
    if cache.frame_count() == 0:
        return []
    vis = visibility(cache, target_pose, target_k, cfg)
    return greedy_from_visibility(vis, cfg.n_s)


def sample_frames_train(vis: VisibilityResult, cfg: RetrievalConfig, rng=None) -> list[int]:
    """Sample frames without replacement, probability proportional to phi.

    Frames with zero visibility are never drawn; at most ``cfg.n_s`` ids
    are returned, fewer when the positive-phi pool is smaller. Seeded via
    ``cfg.seed`` unless an explicit generator is passed.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    weights = vis.phi.astype(np.float64).copy()
    chosen: list[int] = []
    while len(chosen) < cfg.n_s:
        total = weights.sum()
        if total <= 0:
            break
        idx = int(rng.choice(weights.shape[0], p=weights / total))
        chosen.append(idx)
        weights[idx] = 0.0
    return chosen


def coverage_fraction(
    selection, vis: VisibilityResult, denominator: str = "covered"
) -> float:
    """Fraction of target cells the selected frames jointly cover.

    ``denominator="covered"`` divides by the cells any candidate frame
    covers (1.0 means the selection recovers everything recoverable);
    ``denominator="grid"`` divides by all target cells, the form the
    coverage-vs-slot-count curve reports.
    """
    if denominator == "covered":
        denom = int(vis.any_coverage().sum())
    elif denominator == "grid":
        denom = int(vis.min_depth.size)
    else:
        raise ValueError("denominator must be 'covered' or 'grid'")
    if denom == 0:
        return 0.0
    union = np.zeros(vis.grid_shape, dtype=bool)
    for frame_id in selection:
        union |= vis.per_frame_mask[frame_id]
    return float(union.sum() / denom)
