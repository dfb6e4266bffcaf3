"""Spatial-memory engine for long-horizon camera-controlled scene generation.

Modules cover the deterministic geometry and scheduling side of an
autoregressive scene-generation loop: a per-frame 3D cache,
visibility-based frame retrieval, forward-warped correspondence maps,
fixed-budget context packing, self-augmentation latent arithmetic, and
TSDF surface meshing, plus analytic scenes to test all of it against.
"""

from . import cache, contextpack, flowmatch, geometry, mesher, retrieval, synth, warp

__version__ = "0.1.0"

__all__ = [
    "cache",
    "contextpack",
    "flowmatch",
    "geometry",
    "mesher",
    "retrieval",
    "synth",
    "warp",
]
