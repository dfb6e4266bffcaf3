import numpy as np
import pytest

from scenemem.geometry import DepthMap, Intrinsics, Pose
from scenemem.synth import (
    AnalyticScene,
    Plane,
    Sphere,
    checkerboard,
    correspondence_grid,
    look_at_pose,
    render_depth,
)
from scenemem.warp import (
    CanonicalCoordMap,
    canonical_source_map,
    coord_map_to_rgb,
    forward_warp_coords,
    forward_warp_rgb,
    pad_slots,
    read_coord_map,
    write_coord_map,
)

K = Intrinsics(fx=80.0, fy=80.0, cx=48.0, cy=32.0, width=96, height=64)


class TestCanonicalSourceMap:
    def test_slot_channel_values(self):
        assert canonical_source_map(0, 5, 8, 8)[2, 0, 0] == pytest.approx(-1.0)
        assert canonical_source_map(4, 5, 8, 8)[2, 0, 0] == pytest.approx(0.6)

    def test_uv_span_and_center(self):
        m = canonical_source_map(0, 5, 9, 11)
        assert m[0, 0, 0] == -1.0 and m[0, 0, -1] == 1.0
        assert m[1, 0, 0] == -1.0 and m[1, -1, 0] == 1.0
        assert m[0, 4, 5] == pytest.approx(0.0)
        assert m[1, 4, 5] == pytest.approx(0.0)

    def test_out_of_range_slot(self):
        with pytest.raises(ValueError):
            canonical_source_map(5, 5, 4, 4)
        with pytest.raises(ValueError):
            canonical_source_map(-1, 5, 4, 4)


class TestIdentityWarp:
    def test_bit_exact(self):
        scene = AnalyticScene([Plane((0, 0, 2), (0, 0, 1)), Sphere((0.2, 0, 1.5), 0.4)])
        pose = look_at_pose((0.1, -0.2, 0), (0, 0, 2))
        dm = render_depth(scene, pose, K)
        # Quantize like the cache does so the depth channel is f32-exact.
        dm = DepthMap(dm.values.astype(np.float32).astype(np.float64))
        src = canonical_source_map(2, 5, K.height, K.width)
        out = forward_warp_coords(src, dm, pose, pose, K, K, 2, 5)
        np.testing.assert_array_equal(out.validity, dm.validity)
        np.testing.assert_array_equal(out.channels[:3][:, dm.validity], src[:, dm.validity])
        np.testing.assert_array_equal(
            out.channels[3][dm.validity], dm.values[dm.validity].astype(np.float32)
        )

    def test_identity_rgb(self):
        scene = AnalyticScene([Sphere((0, 0, 3), 1.0)])
        pose = Pose.identity()
        dm = render_depth(scene, pose, K)
        rgb = checkerboard(K.height, K.width)
        out = forward_warp_rgb(rgb, dm, pose, pose, K, K)
        np.testing.assert_array_equal(out.rgb[dm.validity], rgb[dm.validity])
        np.testing.assert_array_equal(out.hole_mask, ~dm.validity)


class TestDollyCorrespondence:
    def _plane_cache(self):
        scene = AnalyticScene([Plane((0, 0, 2), (0, 0, 1))])
        pose_src = Pose.identity()
        pose_tgt = Pose(np.eye(3), [0, 0, -1.0])  # dolly forward by 1
        dm = render_depth(scene, pose_src, K)
        return scene, pose_src, pose_tgt, dm

    def test_warped_uv_matches_analytic(self):
        scene, pose_src, pose_tgt, dm = self._plane_cache()
        out = forward_warp_coords(None, dm, pose_src, pose_tgt, K, K, 0, 5)
        status, uv_b, _ = correspondence_grid(scene, pose_src, K, pose_tgt, K)

        # Decode each valid warped pixel back to its source pixel, send that
        # source pixel through the analytic correspondence, and measure how
        # far it lands from the target pixel center it was splatted to.
        rows, cols = np.nonzero(out.validity)
        u = out.channels[0, rows, cols].astype(np.float64)
        v = out.channels[1, rows, cols].astype(np.float64)
        src_c = np.rint((u + 1) / 2 * (K.width - 1)).astype(int)
        src_r = np.rint((v + 1) / 2 * (K.height - 1)).astype(int)
        expected = uv_b[src_r, src_c]
        err = np.linalg.norm(expected - np.stack([cols + 0.5, rows + 0.5], axis=1), axis=1)
        assert np.quantile(err, 0.99) <= 1.0
        assert rows.size > 0.2 * K.width * K.height

    def test_warped_depth_channel(self):
        scene, pose_src, pose_tgt, dm = self._plane_cache()
        out = forward_warp_coords(None, dm, pose_src, pose_tgt, K, K, 0, 5)
        # Plane moves from z=2 to z=1 after a unit dolly.
        vals = out.channels[3][out.validity]
        np.testing.assert_allclose(vals, 1.0, atol=1e-5)


def _splat_landings(scene_part, dm, pose_src, pose_tgt, part_mask):
    """Independent splat oracle: where each masked source pixel lands.

    Recomputes the source -> target mapping through world space (the
    implementation composes in camera space), returning per-landing-pixel
    minimum depth for the masked source pixels.
    """
    from scenemem.geometry import project_points, unproject_points

    rows, cols = np.nonzero(part_mask & dm.validity)
    uv = np.stack([cols + 0.5, rows + 0.5], axis=1)
    pts = unproject_points(uv, dm.values[rows, cols], pose_src, K)
    uv_t, z, front = project_points(pts, pose_tgt, K)
    tc = np.floor(uv_t[:, 0]).astype(int)
    tr = np.floor(uv_t[:, 1]).astype(int)
    ok = front & (tc >= 0) & (tc < K.width) & (tr >= 0) & (tr < K.height)
    zmin = np.full((K.height, K.width), np.inf)
    np.minimum.at(zmin, (tr[ok], tc[ok]), z[ok])
    return zmin


class TestOcclusionSoundness:
    SCENE = AnalyticScene([Plane((0, 0, 4), (0, 0, 1)), Sphere((0, 0, 3), 0.6)])

    def _setup(self):
        pose_src = look_at_pose((-0.8, 0, 0.2), (0, 0, 3))
        pose_tgt = look_at_pose((0.8, 0, 0.2), (0, 0, 3))
        dm = render_depth(self.SCENE, pose_src, K)
        sphere_dm = render_depth(AnalyticScene([Sphere((0, 0, 3), 0.6)]), pose_src, K)
        on_sphere = sphere_dm.validity & (
            np.abs(dm.values - sphere_dm.values) < 1e-9
        )
        return pose_src, pose_tgt, dm, on_sphere

    def test_occluded_surface_never_wins_against_present_occluder(self):
        # Wherever both the near sphere and the far plane splat into the
        # same target pixel, the stored coordinates must decode to a sphere
        # source pixel: the occluded surface never wins the z-buffer.
        pose_src, pose_tgt, dm, on_sphere = self._setup()
        out = forward_warp_coords(None, dm, pose_src, pose_tgt, K, K, 0, 5)

        near = _splat_landings(self.SCENE, dm, pose_src, pose_tgt, on_sphere)
        far = _splat_landings(self.SCENE, dm, pose_src, pose_tgt, ~on_sphere)
        contested = np.isfinite(near) & np.isfinite(far) & (far > near * 1.01)
        assert contested.sum() > 200

        rows, cols = np.nonzero(contested & out.validity)
        u = out.channels[0, rows, cols].astype(np.float64)
        v = out.channels[1, rows, cols].astype(np.float64)
        src_c = np.rint((u + 1) / 2 * (K.width - 1)).astype(int)
        src_r = np.rint((v + 1) / 2 * (K.height - 1)).astype(int)
        assert on_sphere[src_r, src_c].all()

    def test_depth_lower_bound_and_contested_upper_bound(self):
        # Nothing can be nearer than the nearest analytic surface anywhere;
        # where the near surface's splats are present, the stored depth
        # must also not exceed it (pinholes with no near splat are the
        # documented limitation of 1-px splats and are excluded).
        pose_src, pose_tgt, dm, on_sphere = self._setup()
        out = forward_warp_coords(None, dm, pose_src, pose_tgt, K, K, 0, 5)
        tgt = render_depth(self.SCENE, pose_tgt, K).values

        shifts = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                shifts.append(np.roll(np.roll(tgt, dr, axis=0), dc, axis=1))
        lo = np.min(shifts, axis=0)
        hi = np.max(shifts, axis=0)
        inner = np.zeros_like(out.validity)
        inner[1:-1, 1:-1] = True
        check = out.validity & inner
        assert np.all(out.channels[3][check] >= lo[check] * (1 - 2e-3))

        near = _splat_landings(self.SCENE, dm, pose_src, pose_tgt, on_sphere)
        covered = check & np.isfinite(near)
        assert covered.sum() > 500
        assert np.all(out.channels[3][covered] <= hi[covered] * (1 + 2e-3))


class TestWarpRgb:
    def test_rotated_away_all_holes(self):
        scene = AnalyticScene([Plane((0, 0, 2), (0, 0, 1))])
        pose = Pose.identity()
        dm = render_depth(scene, pose, K)
        away = look_at_pose((0, 0, 0), (0, 0, -5))
        out = forward_warp_rgb(checkerboard(K.height, K.width), dm, pose, away, K, K)
        assert out.hole_mask.all()

    def test_dolly_in_hole_fraction_matches_oracle(self):
        # Small dolly toward the plane: magnification predicts the splat
        # reach exactly (closed-form plane scaling).
        scene = AnalyticScene([Plane((0, 0, 2), (0, 0, 1))])
        pose_src = Pose.identity()
        dolly = 0.025
        pose_tgt = Pose(np.eye(3), [0, 0, -dolly])
        dm = render_depth(scene, pose_src, K)
        out = forward_warp_rgb(checkerboard(K.height, K.width), dm, pose_src, pose_tgt, K, K)

        scale = 2.0 / (2.0 - dolly)
        reached = np.zeros((K.height, K.width), dtype=bool)
        cc, rr = np.meshgrid(np.arange(K.width) + 0.5, np.arange(K.height) + 0.5)
        ut = K.cx + scale * (cc - K.cx)
        vt = K.cy + scale * (rr - K.cy)
        ok = (ut >= 0) & (ut < K.width) & (vt >= 0) & (vt < K.height)
        reached[np.floor(vt[ok]).astype(int), np.floor(ut[ok]).astype(int)] = True

        mismatch = (out.hole_mask != ~reached).mean()
        assert mismatch < 0.005
        interior = out.hole_mask[4:-4, 4:-4]
        assert interior.mean() < 0.05

    def test_dimension_mismatch(self):
        dm = DepthMap(np.ones((8, 8)))
        with pytest.raises(ValueError):
            forward_warp_rgb(np.zeros((4, 4, 3)), dm, Pose.identity(), Pose.identity(), K, K)


class TestSplatDeterminism:
    def test_equal_depth_tie_smallest_source_index(self):
        # Two source pixels with identical depth collapse onto one target
        # pixel of a 1-wide target camera: pixel 0 must win.
        k_src = Intrinsics(fx=2.0, fy=2.0, cx=1.0, cy=0.5, width=2, height=1)
        k_tgt = Intrinsics(fx=0.5, fy=0.5, cx=0.5, cy=0.5, width=1, height=1)
        dm = DepthMap(np.array([[3.0, 3.0]]))
        src = np.zeros((3, 1, 2), dtype=np.float32)
        src[0, 0, 0], src[0, 0, 1] = -0.5, 0.5
        # Slightly different poses so the identity fast path is not taken.
        pose_src = Pose.identity()
        pose_tgt = Pose(np.eye(3), [0, 0, 1e-12])
        out = forward_warp_coords(src, dm, pose_src, pose_tgt, k_src, k_tgt, 0, 1)
        assert out.validity[0, 0]
        assert out.channels[0, 0, 0] == np.float32(-0.5)

    def test_repeatable(self):
        scene = AnalyticScene([Sphere((0, 0, 3), 1.0)])
        pose_src = Pose.identity()
        pose_tgt = look_at_pose((0.5, 0.2, 0), (0, 0, 3))
        dm = render_depth(scene, pose_src, K)
        a = forward_warp_coords(None, dm, pose_src, pose_tgt, K, K, 1, 5)
        b = forward_warp_coords(None, dm, pose_src, pose_tgt, K, K, 1, 5)
        np.testing.assert_array_equal(a.channels, b.channels)
        np.testing.assert_array_equal(a.validity, b.validity)


class TestPadSlots:
    def test_empty_list(self):
        maps = pad_slots([], 5, height=8, width=6)
        assert len(maps) == 5
        assert all(not m.validity.any() for m in maps)

    def test_full_list_unchanged(self):
        real = [CanonicalCoordMap.empty(4, 4) for _ in range(5)]
        assert pad_slots(real, 5) == real

    def test_partial_pads_distinguishable(self):
        ch = np.zeros((4, 4, 4), dtype=np.float32)
        ch[3] = 1.0
        real = CanonicalCoordMap(ch, np.ones((4, 4), dtype=bool))
        maps = pad_slots([real, real], 5)
        assert len(maps) == 5
        assert maps[0] is real and maps[1] is real
        assert all(not m.validity.any() for m in maps[2:])

    def test_too_many(self):
        with pytest.raises(ValueError):
            pad_slots([CanonicalCoordMap.empty(2, 2)] * 3, 2)


class TestCoordMapIO:
    def test_roundtrip_exact(self, tmp_path):
        scene = AnalyticScene([Sphere((0, 0, 3), 1.0)])
        pose_src = Pose.identity()
        pose_tgt = look_at_pose((0.3, 0, 0), (0, 0, 3))
        dm = render_depth(scene, pose_src, K)
        cmap = forward_warp_coords(None, dm, pose_src, pose_tgt, K, K, 3, 5)
        write_coord_map(tmp_path / "m.lyc", cmap)
        back = read_coord_map(tmp_path / "m.lyc")
        np.testing.assert_array_equal(back.channels, cmap.channels)
        np.testing.assert_array_equal(back.validity, cmap.validity)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.lyc").write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ValueError, match="LYC1"):
            read_coord_map(tmp_path / "bad.lyc")

    def test_visualization_shape(self):
        cmap = CanonicalCoordMap.empty(6, 8)
        rgb = coord_map_to_rgb(cmap)
        assert rgb.shape == (6, 8, 3)
        assert (rgb == 0).all()


class TestMapValidation:
    def test_uv_range_enforced(self):
        ch = np.zeros((4, 2, 2), dtype=np.float32)
        ch[0] = 2.0
        ch[3] = 1.0
        with pytest.raises(ValueError, match="\\[-1, 1\\]"):
            CanonicalCoordMap(ch, np.ones((2, 2), dtype=bool))

    def test_slot_constant_enforced(self):
        ch = np.zeros((4, 1, 2), dtype=np.float32)
        ch[3] = 1.0
        ch[2, 0, 0] = 0.2
        ch[2, 0, 1] = 0.4
        with pytest.raises(ValueError, match="constant"):
            CanonicalCoordMap(ch, np.ones((1, 2), dtype=bool))

    def test_sentinel_zeroed(self):
        ch = np.full((4, 2, 2), 0.5, dtype=np.float32)
        valid = np.zeros((2, 2), dtype=bool)
        valid[0, 0] = True
        m = CanonicalCoordMap(ch, valid)
        assert (m.channels[:, ~m.validity] == 0).all()
