"""Retrieve the history frames that actually see a target viewpoint.

Visibility scoring splats every frame's cached points into the target
view with an occlusion test; greedy selection then maximizes joint
coverage. The payoff is long-range recall: when a trajectory loops back,
the earliest frames come straight back into context.
"""

import numpy as np

from scenemem.cache import SceneCache
from scenemem.geometry import Intrinsics
from scenemem.retrieval import (
    RetrievalConfig,
    coverage_fraction,
    greedy_from_visibility,
    sample_frames_train,
    visibility,
)
from scenemem.synth import AnalyticScene, Box, Plane, Sphere, make_trajectory, render_depth

k = Intrinsics(fx=160.0, fy=160.0, cx=104.0, cy=60.0, width=208, height=120)
scene = AnalyticScene(
    [
        Plane((0, 0, 0), (0, 1, 0)),
        Sphere((0, 1.0, 3), 1.0),
        Sphere((3.5, 0.8, -1), 0.9),
        Box((-4, 0, -2), (-2.5, 1.8, 0)),
    ]
)

print("Building a 300-pose loop that returns to its starting pose...")
trajectory = make_trajectory(
    "revisit-loop", center=(0, 1, 0), radius=6.0, n=300, elevation=2.0, intrinsics=k
)
cache = SceneCache(subsample_d=8)
for pose, kk in list(trajectory)[:-1]:
    cache.insert_frame(render_depth(scene, pose, kk), pose, kk)

cfg = RetrievalConfig(n_s=5, delta=0.1)
final_pose, final_k = trajectory[-1]
vis = visibility(cache, final_pose, final_k, cfg)

print(f"  cache holds {cache.frame_count()} frames")
top = np.argsort(vis.phi)[::-1][:8]
print(f"  highest visibility scores at the loop's end: {[(int(i), int(vis.phi[i])) for i in top]}")

selected = greedy_from_visibility(vis, cfg.n_s)
print(f"  greedy selection: {selected}")
print(f"  -> recalls frames from the trajectory's start: {[f for f in selected if f < 30]}")
print(f"  joint coverage of recoverable cells: {coverage_fraction(selected, vis):.3f}")

print("\nCoverage as the slot budget grows (diminishing returns):")
wide = greedy_from_visibility(vis, 8)
for n in range(1, 9):
    frac = coverage_fraction(wide[:n], vis)
    print(f"  n_s={n}: {frac:.3f} {'#' * int(40 * frac)}")

print("\nTraining-style sampling (proportional to visibility, seeded):")
for seed in range(3):
    sample = sample_frames_train(vis, RetrievalConfig(n_s=5, delta=0.1, seed=seed))
    print(f"  seed {seed}: {sample}")
