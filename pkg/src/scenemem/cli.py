"""Command-line interface: cache ingestion, queries, and batch jobs.

Every subcommand is a thin wrapper over the library so results are
reproducible against the running service. Machine-readable output is JSON
on stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cache as cachemod
from . import flowmatch, mesher, retrieval, synth
from .contextpack import (
    DEFAULT_LAYOUT,
    assemble_plan,
    latent_frame_count,
    parse_layout,
)
from .geometry import camera_from_json
from .retrieval import RetrievalConfig, coverage_fraction, greedy_from_visibility, visibility
from .service import (
    LOCK_FILENAME,
    ServiceConfig,
    serve,
    visibility_payload,
    warp_frames_to_files,
)

__all__ = ["main"]


class CliError(Exception):
    pass


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _load_camera_file(path):
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read camera file {path}: {exc}") from exc
    return camera_from_json(obj)


def _load_trajectory_file(path):
    """Accept a TrajectoryDoc or a bare list of camera JSON objects."""
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read trajectory {path}: {exc}") from exc
    if isinstance(obj, dict) and "keyframes" in obj:
        entries = [kf["camera"] for kf in obj["keyframes"]]
    elif isinstance(obj, list):
        entries = obj
    else:
        raise CliError(f"{path}: expected a trajectory document or camera list")
    if not entries:
        raise CliError(f"{path}: trajectory is empty")
    return [camera_from_json(c) for c in entries]


def _open_cache(path):
    try:
        return cachemod.load_cache(path)
    except cachemod.CacheFormatError as exc:
        raise CliError(str(exc)) from exc


def _check_not_locked(path):
    lock = Path(path) / LOCK_FILENAME
    if lock.exists():
        raise CliError(
            f"cache {path} is locked by a running service (remove {lock} if stale)"
        )


def cmd_ingest(args):
    out = Path(args.out)
    if out.exists():
        _check_not_locked(out)
    scache = cachemod.SceneCache(subsample_d=args.subsample)

    if args.scene:
        if not args.trajectory:
            raise CliError("--scene requires --trajectory (camera list to render)")
        scene = synth.scene_from_json(json.loads(Path(args.scene).read_text()))
        cameras = _load_trajectory_file(args.trajectory)
        for pose, k in cameras:
            dm = synth.render_depth(scene, pose, k)
            scache.insert_frame(dm, pose, k)
    else:
        if not args.depth or not args.cameras:
            raise CliError("file ingest needs --depth files and --cameras list")
        cams = json.loads(Path(args.cameras).read_text())
        if not isinstance(cams, list):
            raise CliError("--cameras must hold a JSON list of camera objects")
        if len(cams) != len(args.depth):
            raise CliError(
                f"{len(args.depth)} depth files but {len(cams)} cameras: "
                "counts must match"
            )
        if args.rgb and len(args.rgb) != len(args.depth):
            raise CliError(
                f"{len(args.depth)} depth files but {len(args.rgb)} rgb files"
            )
        for i, depth_file in enumerate(args.depth):
            values = cachemod.read_depth_raster(depth_file)
            pose, k = camera_from_json(cams[i])
            rgb = None
            if args.rgb:
                from PIL import Image

                with Image.open(args.rgb[i]) as im:
                    rgb = np.asarray(im.convert("RGB"))
            scache.insert_frame(values, pose, k, rgb_ref=rgb)

    if scache.frame_count() == 0:
        raise CliError("no frames ingested")
    cachemod.save_cache(scache, out)
    _emit({"cache": str(out), "frames": scache.frame_count(), "subsample_d": scache.subsample_d})


def cmd_retrieve(args):
    scache = _open_cache(args.cache)
    if scache.frame_count() == 0:
        raise CliError("cache is empty")
    pose, k = _load_camera_file(args.camera)
    cfg = RetrievalConfig(n_s=args.n_s, delta=args.delta, seed=args.seed)
    payload = visibility_payload(
        scache,
        pose,
        k,
        cfg,
        include_cells=args.cells,
        mode="sample" if args.sample else "greedy",
    )
    _emit(payload)


def cmd_warp(args):
    scache = _open_cache(args.cache)
    pose, k = _load_camera_file(args.camera)
    ids = [int(x) for x in args.frames.split(",") if x != ""]
    if not ids:
        raise CliError("--frames needs at least one id")
    try:
        files = warp_frames_to_files(
            scache, pose, k, ids, args.out_dir, n_slots=max(args.n_s, len(ids))
        )
    except KeyError as exc:
        raise CliError(str(exc)) from exc
    if args.png:
        from PIL import Image

        from .warp import coord_map_to_rgb, read_coord_map

        for f in files:
            rgb = coord_map_to_rgb(read_coord_map(f))
            Image.fromarray(rgb).save(Path(f).with_suffix(".png"))
    _emit({"files": files})


def cmd_pack(args):
    layout = parse_layout(args.layout)
    retrieved = [int(x) for x in args.retrieved.split(",") if x != ""] if args.retrieved else []
    history = latent_frame_count(args.frames)
    plan = assemble_plan(history, retrieved, layout, args.hlat, args.wlat, args.patch)
    _emit(
        {
            "layout": args.layout,
            "video_frames": args.frames,
            "history_latents": history,
            "plan": plan.to_json(),
        }
    )


def cmd_mesh(args):
    scache = _open_cache(args.cache)
    if scache.frame_count() == 0:
        raise CliError("cache is empty")
    levels = [float(x) for x in args.levels.split(",")]
    cameras = [(rec.pose, rec.intrinsics) for rec in scache.frames]
    grid = mesher.build_grid(cameras, args.near, levels)
    for rec in scache.frames:
        pts = mesher.depth_to_oriented_points(rec.depth, rec.pose, rec.intrinsics, args.stride)
        mesher.fuse_sdf(grid, pts)
    per_level = [mesher.marching_cubes(grid, lvl) for lvl in range(grid.num_levels)]
    mesh = mesher.stitch_levels(per_level, grid)
    if args.decimate and mesh.face_count > args.decimate:
        mesh = mesher.decimate(mesh, args.decimate)
    out = Path(args.out)
    if out.suffix == ".obj":
        mesher.save_obj(out, mesh)
    elif out.suffix == ".ply":
        mesher.save_ply(out, mesh)
    else:
        raise CliError("--out must end in .obj or .ply")
    _emit(
        {
            "mesh": str(out),
            "vertices": mesh.vertex_count,
            "faces": mesh.face_count,
            "levels": levels,
            "per_level_faces": [m.face_count for m in per_level],
        }
    )


def cmd_flowcheck(args):
    policy = flowmatch.AugmentPolicy(p_aug=args.p_aug, t_max=args.t_max, seed=args.seed)
    shape = tuple(int(x) for x in args.shape.split(","))
    stats = flowmatch.augment_statistics(shape, policy, trials=args.trials)
    _emit(stats)


def _coverage_table(scache, cameras, cfg, n_s_values):
    """Coverage-vs-slot-count table averaged over target cameras.

    Greedy selections are prefix-monotone, so one max-width greedy run per
    camera yields every column.
    """
    max_n = max(n_s_values)
    rows = {n: [] for n in n_s_values}
    rows_grid = {n: [] for n in n_s_values}
    per_step_phi = []
    final_selection = None
    for pose, k in cameras:
        vis = visibility(scache, pose, k, cfg)
        sel = greedy_from_visibility(vis, max_n)
        per_step_phi.append([int(x) for x in vis.phi])
        for n in n_s_values:
            rows[n].append(coverage_fraction(sel[:n], vis))
            rows_grid[n].append(coverage_fraction(sel[:n], vis, denominator="grid"))
        final_selection = sel
    table = [
        {
            "n_s": n,
            "coverage": float(np.mean(rows[n])),
            "coverage_grid": float(np.mean(rows_grid[n])),
        }
        for n in n_s_values
    ]
    return table, per_step_phi, final_selection


def cmd_report(args):
    scache = _open_cache(args.cache)
    if scache.frame_count() == 0:
        raise CliError("cache is empty")
    cameras = _load_trajectory_file(args.trajectory)
    cfg = RetrievalConfig(delta=args.delta)
    n_s_values = list(range(1, 9))
    table, per_step_phi, final_sel = _coverage_table(scache, cameras, cfg, n_s_values)
    early = max(1, scache.frame_count() // 10)
    revisit_recall = any(fid < early for fid in (final_sel or [])[: args.n_s])
    report = {
        "cache": str(args.cache),
        "frames": scache.frame_count(),
        "trajectory_steps": len(cameras),
        "coverage_vs_n_s": table,
        "per_step_phi": per_step_phi,
        "revisit_recall": bool(revisit_recall),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    _emit(report)


def cmd_simulate(args):
    scene = synth.scene_from_json(json.loads(Path(args.scene).read_text()))
    k = camera_from_json(json.loads(Path(args.camera).read_text()))[1] if args.camera else None
    if k is None:
        from .geometry import Intrinsics

        k = Intrinsics(fx=300.0, fy=300.0, cx=208.0, cy=120.0, width=416, height=240)
    params = dict(
        center=tuple(float(x) for x in args.center.split(",")),
        radius=args.radius,
        n=args.n,
        elevation=args.elevation,
        intrinsics=k,
    )
    if args.kind == "dolly":
        params = dict(
            start=tuple(float(x) for x in args.center.split(",")),
            direction=(0.0, 0.0, 1.0),
            step=args.radius / max(args.n - 1, 1),
            n=args.n,
            intrinsics=k,
        )
    traj = synth.make_trajectory(args.kind, **params)

    scache = cachemod.SceneCache(subsample_d=args.subsample)
    for pose, kk in traj:
        scache.insert_frame(synth.render_depth(scene, pose, kk), pose, kk)
    out = Path(args.out)
    cachemod.save_cache(scache, out)

    # End-to-end smoke of retrieval, warping, and meshing on the new cache.
    cfg = RetrievalConfig()
    target_pose, target_k = traj[-1]
    vis = visibility(scache, target_pose, target_k, cfg)
    sel = greedy_from_visibility(vis, cfg.n_s)
    warp_dir = out / "warps"
    files = warp_frames_to_files(scache, target_pose, target_k, sel, warp_dir, n_slots=cfg.n_s)
    table, _, _ = _coverage_table(
        scache, [traj[i] for i in range(0, len(traj), max(1, len(traj) // 8))], cfg, list(range(1, 9))
    )
    mesh_stats = None
    if args.mesh_levels != "none":
        if args.mesh_levels:
            levels = [float(x) for x in args.mesh_levels.split(",")]
            near = args.near
        else:
            # Synthetic scenes know their own scale: default to voxels a
            # couple of percent of the median anchor depth, fine band out
            # to that depth.
            scale = scache.scene_scale or 1.0
            levels = [scale / 64.0, scale / 32.0]
            near = scale
        grid = mesher.build_grid([(p, kk) for p, kk in traj], near, levels)
        for rec in scache.frames:
            mesher.fuse_sdf(
                grid,
                mesher.depth_to_oriented_points(rec.depth, rec.pose, rec.intrinsics, args.stride),
            )
        mesh = mesher.stitch_levels(
            [mesher.marching_cubes(grid, lvl) for lvl in range(grid.num_levels)], grid
        )
        mesh_path = out / "mesh.ply"
        mesher.save_ply(mesh_path, mesh)
        mesh_stats = {"mesh": str(mesh_path), "faces": mesh.face_count}
    report = {
        "cache": str(out),
        "frames": scache.frame_count(),
        "selected_at_final_pose": sel,
        "coverage_at_final_pose": coverage_fraction(sel, vis),
        "warp_files": files,
        "coverage_vs_n_s": table,
        "mesh": mesh_stats,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    _emit(report)


def cmd_serve(args):
    config = ServiceConfig(
        cache_path=args.cache,
        bind=args.bind or "",
        n_s=args.n_s,
        delta=args.delta,
        cors_origins=tuple(args.cors or ()),
    )
    serve(config)


def build_parser():
    p = argparse.ArgumentParser(
        prog="scenemem",
        description="Spatial-memory engine: cache, retrieval, warping, packing, meshing.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="build a cache from depth files or a synthetic scene")
    sp.add_argument("--depth", nargs="*", help=".lyd depth raster files, frame order")
    sp.add_argument("--cameras", help="JSON file: list of camera objects")
    sp.add_argument("--rgb", nargs="*", help="optional PNG files, one per frame")
    sp.add_argument("--scene", help="synthetic scene JSON (alternative input)")
    sp.add_argument("--trajectory", help="trajectory JSON for synthetic rendering")
    sp.add_argument("--out", required=True)
    sp.add_argument("--subsample", type=int, default=8)
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("retrieve", help="visibility scores and frame selection for a camera")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--camera", required=True, help="camera JSON file")
    sp.add_argument("--n-s", type=int, default=5, dest="n_s")
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sample", action="store_true", help="training-mode proportional sampling")
    sp.add_argument("--cells", action="store_true", help="include RLE coverage mask")
    sp.set_defaults(fn=cmd_retrieve)

    sp = sub.add_parser("warp", help="write warped correspondence maps for chosen frames")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--camera", required=True)
    sp.add_argument("--frames", required=True, help="comma-separated frame ids")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n-s", type=int, default=5, dest="n_s")
    sp.add_argument("--png", action="store_true", help="also write RGB visualizations")
    sp.set_defaults(fn=cmd_warp)

    sp = sub.add_parser("pack", help="context token plan for a history length")
    sp.add_argument("--layout", default=DEFAULT_LAYOUT)
    sp.add_argument("--frames", type=int, required=True, help="history video frames")
    sp.add_argument("--hlat", type=int, required=True)
    sp.add_argument("--wlat", type=int, required=True)
    sp.add_argument("--patch", type=int, default=2)
    sp.add_argument("--retrieved", help="comma-separated retrieved frame ids")
    sp.set_defaults(fn=cmd_pack)

    sp = sub.add_parser("mesh", help="extract a surface mesh from the cache depth")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--levels", required=True, help='voxel sizes, e.g. "0.02,0.04,0.08"')
    sp.add_argument("--near", type=float, required=True, help="finest-band radius")
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--decimate", type=int, default=0, help="target face count")
    sp.add_argument("--out", required=True, help=".obj or .ply path")
    sp.set_defaults(fn=cmd_mesh)

    sp = sub.add_parser("flowcheck", help="Monte Carlo check of the augmentation policy")
    sp.add_argument("--trials", type=int, default=10000)
    sp.add_argument("--p-aug", type=float, default=0.7, dest="p_aug")
    sp.add_argument("--t-max", type=float, default=0.5, dest="t_max")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--shape", default="2,4,8,8")
    sp.set_defaults(fn=cmd_flowcheck)

    sp = sub.add_parser("simulate", help="scene + trajectory -> cache + end-to-end report")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--kind", default="orbit", choices=["orbit", "dolly", "revisit-loop"])
    sp.add_argument("--n", type=int, default=24)
    sp.add_argument("--radius", type=float, default=3.0)
    sp.add_argument("--center", default="0,0,0")
    sp.add_argument("--elevation", type=float, default=0.0)
    sp.add_argument("--camera", help="camera JSON file for intrinsics")
    sp.add_argument("--out", required=True)
    sp.add_argument("--subsample", type=int, default=8)
    sp.add_argument(
        "--mesh-levels",
        dest="mesh_levels",
        default="",
        help='voxel sizes ("none" skips meshing; default scales to the scene)',
    )
    sp.add_argument("--near", type=float, default=2.0)
    sp.add_argument("--stride", type=int, default=2)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("report", help="coverage-vs-slot-count metrics over a trajectory")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--trajectory", required=True, help="trajectory doc or camera list JSON")
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--n-s", type=int, default=5, dest="n_s")
    sp.add_argument("--out", help="also write the report JSON here")
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("serve", help="run the HTTP service over a cache directory")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--bind", help="host:port (default env SCENEMEM_BIND or 127.0.0.1:8787)")
    sp.add_argument("--n-s", type=int, default=5, dest="n_s")
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--cors", nargs="*", help="allowed CORS origins ('*' for any)")
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
