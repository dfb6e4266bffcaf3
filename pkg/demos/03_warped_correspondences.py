"""Forward-warp canonical coordinate maps into a new viewpoint.

Each retrieved frame gets a (u, v, slot) identity raster; splatting it
through the frame's depth into the target camera produces dense
correspondences with a warped-depth fourth channel. RGB warping uses the
same machinery and keeps its disocclusion holes explicit.
"""

from pathlib import Path

import numpy as np

from scenemem.geometry import Intrinsics
from scenemem.synth import AnalyticScene, Plane, Sphere, checkerboard, look_at_pose, render_depth
from scenemem.warp import (
    coord_map_to_rgb,
    forward_warp_coords,
    forward_warp_rgb,
    pad_slots,
    write_coord_map,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

k = Intrinsics(fx=300.0, fy=300.0, cx=208.0, cy=120.0, width=416, height=240)
scene = AnalyticScene([Plane((0, 0, 6), (0, 0, 1)), Sphere((0, 0, 3), 1.0)])
pose_src = look_at_pose((-0.8, 0.2, 0.0), (0, 0, 3))
pose_tgt = look_at_pose((0.8, -0.1, 0.2), (0, 0, 3))

depth = render_depth(scene, pose_src, k)
print(f"Source view: {depth.valid_count()} valid depth pixels")

cmap = forward_warp_coords(None, depth, pose_src, pose_tgt, k, k, slot_index=0, n_slots=5)
valid_frac = cmap.validity.mean()
print(f"Warped map: {valid_frac:.1%} of target pixels received a correspondence")
print(f"  u range  [{cmap.channels[0][cmap.validity].min():+.3f}, {cmap.channels[0][cmap.validity].max():+.3f}]")
print(f"  slot channel constant: {cmap.channels[2][cmap.validity][0]:+.1f} (slot 0 of 5)")
print(f"  warped depth range: [{cmap.channels[3][cmap.validity].min():.2f}, {cmap.channels[3][cmap.validity].max():.2f}]")

map_path = OUT / "slot0.lyc"
write_coord_map(map_path, cmap)
print(f"Wrote correspondence raster to {map_path}")

try:
    from PIL import Image

    Image.fromarray(coord_map_to_rgb(cmap)).save(OUT / "slot0_viz.png")
    print(f"Wrote visualization to {OUT / 'slot0_viz.png'}")
except ImportError:
    pass

# A retrieved list shorter than the slot budget is padded with all-invalid
# sentinels so downstream consumers can tell real slots from empty ones.
slots = pad_slots([cmap], n_s=5)
print(f"Padded slots: {[('real' if m.validity.any() else 'pad') for m in slots]}")

warped = forward_warp_rgb(checkerboard(k.height, k.width), depth, pose_src, pose_tgt, k, k)
print(f"RGB warp holes: {warped.hole_mask.mean():.1%} of target pixels (reported, never inpainted)")

try:
    from PIL import Image

    Image.fromarray(warped.rgb).save(OUT / "warped_rgb.png")
except ImportError:
    pass
