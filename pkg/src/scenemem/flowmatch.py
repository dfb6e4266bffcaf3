"""Self-augmentation arithmetic on history latents.

Clean history latents are corrupted along the rectified-flow line
``z_t = (1-t) z0 + t eps`` and reconstructed with a single velocity step
``z_t - t v``, exposing a downstream model to its own imperfect outputs
during training. With the true velocity ``eps - z0`` the round trip is an
exact identity, and any velocity error delta reaches the reconstruction
as exactly ``t * delta``. No network lives here - callers supply the
velocity function, tests supply analytic ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AugmentPolicy",
    "corrupt",
    "one_step_denoise",
    "self_augment",
    "augment_statistics",
]


@dataclass(frozen=True)
class AugmentPolicy:
    """Stochastic augmentation policy: fire with ``p_aug``, t ~ U(0, t_max)."""

    p_aug: float = 0.7
    t_max: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_aug <= 1.0:
            raise ValueError("p_aug must lie in [0, 1]")
        if not 0.0 < self.t_max <= 1.0:
            raise ValueError("t_max must lie in (0, 1]")


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape {b.shape} does not match {a.shape}")


def corrupt(z0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    """Noise a clean latent along the flow line: (1-t) z0 + t eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_same_shape(z0, eps, "corrupt")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return (1.0 - t) * z0 + t * eps


def one_step_denoise(zt: np.ndarray, t: float, velocity: np.ndarray) -> np.ndarray:
    """Single velocity step back toward the clean latent: zt - t * v."""
    zt = np.asarray(zt, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    _check_same_shape(zt, velocity, "one_step_denoise")
    return zt - t * velocity


def self_augment(z0_hist: np.ndarray, policy: AugmentPolicy, velocity_fn, rng=None):
    """Stochastically replace a clean history latent with its reconstruction.

    With probability ``policy.p_aug`` draws t ~ U(0, t_max) and unit
    Gaussian noise, corrupts, queries ``velocity_fn(zt, t)``, and
    reconstructs with one denoising step; otherwise the input passes
    through untouched. Returns ``(latent, applied, t_used)`` with t_used
    None when augmentation did not fire. Seeded by ``policy.seed`` unless
    a generator is passed.
    """
    z0 = np.asarray(z0_hist, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(policy.seed)
    if rng.random() >= policy.p_aug:
        return z0, False, None
    t = float(rng.uniform(0.0, policy.t_max))
    eps = rng.standard_normal(z0.shape)
    zt = corrupt(z0, eps, t)
    v = np.asarray(velocity_fn(zt, t), dtype=np.float64)
    _check_same_shape(z0, v, "velocity_fn output")
    return one_step_denoise(zt, t, v), True, t


def augment_statistics(shape, policy: AugmentPolicy, trials: int, velocity_bias=0.0):
    """Monte Carlo summary of the augmentation policy over seeded trials.

    Uses the analytic velocity ``eps - z0`` plus an optional constant bias
    for each trial's fresh Gaussian latent. Returns a dict with the
    applied fraction, the range of drawn t values, and the maximum
    relative reconstruction error across trials.
    """
    rng = np.random.default_rng(policy.seed)
    applied_count = 0
    t_lo, t_hi = np.inf, -np.inf
    max_rel_err = 0.0
    for _ in range(trials):
        z0 = rng.standard_normal(shape)

        def velocity(zt, t, z0=z0):
            eps = (zt - (1.0 - t) * z0) / t if t > 0 else np.zeros_like(z0)
            return eps - z0 + velocity_bias

        out, applied, t_used = self_augment(z0, policy, velocity, rng=rng)
        if applied:
            applied_count += 1
            t_lo = min(t_lo, t_used)
            t_hi = max(t_hi, t_used)
        denom = max(float(np.abs(z0).max()), 1e-12)
        err = float(np.abs(out - (z0 + (t_used or 0.0) * -velocity_bias)).max())
        max_rel_err = max(max_rel_err, err / denom)
    return {
        "trials": trials,
        "applied": applied_count,
        "applied_fraction": applied_count / trials if trials else 0.0,
        "t_min": None if applied_count == 0 else t_lo,
        "t_max_seen": None if applied_count == 0 else t_hi,
        "max_relative_error": max_rel_err,
    }
