"""HTTP service exposing the engine to interactive clients.

A thin shell over the library: every response is reproducible with an
equivalent CLI invocation against the same cache directory. Point cloud
payloads are binary (u32 count + float32 xyz triples, little-endian);
everything else is JSON. Trajectory documents persist as JSON files in a
``trajectories/`` directory beside the cache; an advisory ``.lock`` file
in the cache directory warns ingest off while the service runs.
"""

from __future__ import annotations

import json
import os
import re
import struct
import threading
import time
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .cache import SceneCache, load_cache
from .contextpack import DEFAULT_LAYOUT, assemble_plan, latent_frame_count, parse_layout
from .geometry import camera_from_json
from .retrieval import (
    RetrievalConfig,
    coverage_fraction,
    greedy_from_visibility,
    sample_frames_train,
    visibility,
)
from .warp import forward_warp_coords, write_coord_map

__all__ = [
    "ServiceConfig",
    "TrajectoryStore",
    "ApiError",
    "visibility_payload",
    "warp_frames_to_files",
    "make_server",
    "serve",
    "LOCK_FILENAME",
]

LOCK_FILENAME = ".scenemem.lock"
BIND_ENV_VAR = "SCENEMEM_BIND"
DEFAULT_BIND = "127.0.0.1:8787"


@dataclass(frozen=True)
class ServiceConfig:
    """Service settings; retrieval defaults follow the engine constants."""

    cache_path: str
    bind: str = ""
    n_s: int = 5
    delta: float = 0.1
    layout: str = DEFAULT_LAYOUT
    cors_origins: tuple = ()

    def __post_init__(self):
        if not self.bind:
            object.__setattr__(
                self, "bind", os.environ.get(BIND_ENV_VAR, DEFAULT_BIND)
            )
        if self.n_s < 1 or self.delta <= 0:
            raise ValueError("invalid retrieval defaults")

    def host_port(self):
        host, _, port = self.bind.rpartition(":")
        return host or "127.0.0.1", int(port)


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _parse_camera(obj):
    if not isinstance(obj, dict) or "camera" not in obj:
        raise ApiError(400, "request body needs a 'camera' object")
    try:
        return camera_from_json(obj["camera"])
    except ValueError as exc:
        raise ApiError(400, str(exc)) from exc


def _rle_encode(mask: np.ndarray):
    """Run lengths of a flattened boolean mask, starting with the 0-run."""
    flat = mask.reshape(-1).astype(np.int8)
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return [int(r) for r in runs]


def visibility_payload(
    cache: SceneCache,
    pose,
    k,
    cfg: RetrievalConfig,
    layout=None,
    include_cells: bool = False,
    mode: str = "greedy",
):
    """Retrieval response shared by the service and the CLI.

    Contains per-frame visibility scores, the selected frame ids, their
    joint coverage, and the context plan (with token counts) the selection
    implies.
    """
    vis = visibility(cache, pose, k, cfg)
    if mode == "greedy":
        selected = greedy_from_visibility(vis, cfg.n_s)
    elif mode == "sample":
        selected = sample_frames_train(vis, cfg)
    else:
        raise ApiError(400, f"unknown retrieval mode {mode!r}")
    layout = layout or parse_layout(DEFAULT_LAYOUT)
    h_lat = max(1, k.height // 8)
    w_lat = max(1, k.width // 8)
    capacity = sum(s.n for s in layout.spatial)
    plan = assemble_plan(
        latent_frame_count(max(1, cache.frame_count())),
        selected[:capacity],
        layout,
        h_lat,
        w_lat,
    )
    payload = {
        "phi": [int(x) for x in vis.phi],
        "selected": selected,
        "coverage": coverage_fraction(selected, vis),
        "coverage_grid": coverage_fraction(selected, vis, denominator="grid"),
        "plan": plan.to_json(),
    }
    if include_cells:
        union = np.zeros(vis.grid_shape, dtype=bool)
        for fid in selected:
            union |= vis.per_frame_mask[fid]
        payload["per_cell"] = {
            "shape": list(vis.grid_shape),
            "rle": _rle_encode(union),
        }
    return payload


def warp_frames_to_files(cache, pose, k, frame_ids, out_dir, n_slots=None):
    """Warp the given frames toward a target camera and write .lyc files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_slots = n_slots or max(len(frame_ids), 1)
    files = []
    for slot, fid in enumerate(frame_ids):
        rec = cache.get_frame(fid)
        cmap = forward_warp_coords(
            None, rec.depth, rec.pose, pose, rec.intrinsics, k, slot, n_slots
        )
        path = out_dir / f"warp_slot{slot}_frame{fid}.lyc"
        write_coord_map(path, cmap)
        files.append(str(path))
    return files


class TrajectoryStore:
    """JSON-file-backed store of trajectory documents, one file per id."""

    _ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, doc_id: str) -> Path:
        if not self._ID_RE.match(doc_id):
            raise ApiError(400, f"invalid trajectory id {doc_id!r}")
        return self.root / f"{doc_id}.json"

    @staticmethod
    def validate(doc) -> dict:
        if not isinstance(doc, dict) or not doc.get("id"):
            raise ApiError(400, "trajectory document needs an 'id'")
        keyframes = doc.get("keyframes")
        if not keyframes:
            raise ApiError(400, "trajectory document needs nonempty 'keyframes'")
        for i, kf in enumerate(keyframes):
            try:
                camera_from_json(kf["camera"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ApiError(400, f"keyframe {i}: {exc}") from exc
        return doc

    def list_ids(self):
        return sorted(p.stem for p in self.root.glob("*.json"))

    def get(self, doc_id: str) -> dict:
        path = self._path(doc_id)
        if not path.is_file():
            raise ApiError(404, f"no trajectory {doc_id!r}")
        return json.loads(path.read_text())

    def create(self, doc: dict) -> dict:
        doc = self.validate(doc)
        with self._lock:
            path = self._path(doc["id"])
            if path.exists():
                raise ApiError(409, f"trajectory {doc['id']!r} already exists")
            now = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
            doc.setdefault("created", now)
            doc["modified"] = now
            path.write_text(json.dumps(doc, indent=2))
        return doc

    def put(self, doc_id: str, doc: dict) -> dict:
        doc = dict(doc)
        doc["id"] = doc_id
        doc = self.validate(doc)
        with self._lock:
            path = self._path(doc_id)
            now = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
            if path.exists():
                doc.setdefault("created", json.loads(path.read_text()).get("created", now))
            else:
                doc.setdefault("created", now)
            doc["modified"] = now
            path.write_text(json.dumps(doc, indent=2))
        return doc


class _Engine:
    """Shared state behind the request handlers."""

    def __init__(self, config: ServiceConfig, cache: SceneCache | None = None):
        self.config = config
        self.cache = cache if cache is not None else load_cache(config.cache_path)
        self.layout = parse_layout(config.layout)
        self.trajectories = TrajectoryStore(Path(config.cache_path) / "trajectories")
        self.cfg = RetrievalConfig(n_s=config.n_s, delta=config.delta)

    def frames_json(self):
        from .geometry import camera_to_json

        return {
            "frames": [
                {
                    "frame_id": rec.frame_id,
                    "camera": camera_to_json(rec.pose, rec.intrinsics),
                    "valid_points": int(rec.cloud_valid.sum()),
                }
                for rec in self.cache.frames
            ]
        }

    def points_blob(self, frame_id: int) -> bytes:
        try:
            rec = self.cache.get_frame(frame_id)
        except KeyError as exc:
            raise ApiError(404, str(exc)) from exc
        pts = rec.valid_points().astype("<f4")
        return struct.pack("<I", pts.shape[0]) + pts.tobytes()

    def config_json(self):
        return {
            "n_s": self.cfg.n_s,
            "delta": self.cfg.delta,
            "subsample_d": self.cache.subsample_d,
            "scene_scale": self.cache.scene_scale,
            "frame_count": self.cache.frame_count(),
            "layout": self.config.layout,
        }


def make_server(config: ServiceConfig, cache: SceneCache | None = None):
    """Build (but do not start) the HTTP server for the given cache."""
    engine = _Engine(config, cache)
    cors = config.cors_origins

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _cors_headers(self):
            origin = self.headers.get("Origin")
            if origin and ("*" in cors or origin in cors):
                self.send_header("Access-Control-Allow-Origin", origin)
                self.send_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")

        def _send(self, status, body: bytes, content_type="application/json"):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self._cors_headers()
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, obj, status=200):
            self._send(status, json.dumps(obj).encode())

        def _read_json(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if not raw:
                raise ApiError(400, "empty request body")
            try:
                return json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ApiError(400, f"invalid JSON: {exc}") from exc

        def _route(self, method):
            path = self.path.split("?")[0].rstrip("/") or "/"
            try:
                if method == "OPTIONS":
                    self._send(HTTPStatus.NO_CONTENT, b"")
                    return

                if method == "GET" and path == "/frames":
                    self._send_json(engine.frames_json())
                elif method == "GET" and re.fullmatch(r"/frames/\d+/points", path):
                    fid = int(path.split("/")[2])
                    self._send(200, engine.points_blob(fid), "application/octet-stream")
                elif method == "GET" and path == "/config":
                    self._send_json(engine.config_json())
                elif method == "POST" and path == "/visibility":
                    body = self._read_json()
                    pose, k = _parse_camera(body)
                    cfg = engine.cfg
                    if "n_s" in body:
                        cfg = RetrievalConfig(
                            n_s=int(body["n_s"]), delta=cfg.delta, seed=cfg.seed
                        )
                    if engine.cache.frame_count() == 0:
                        raise ApiError(400, "cache is empty")
                    payload = visibility_payload(
                        engine.cache,
                        pose,
                        k,
                        cfg,
                        layout=engine.layout,
                        include_cells=bool(body.get("include_cells")),
                    )
                    self._send_json(payload)
                elif method == "POST" and path == "/warp":
                    body = self._read_json()
                    pose, k = _parse_camera(body)
                    ids = body.get("frame_ids")
                    if not isinstance(ids, list) or not ids:
                        raise ApiError(400, "request body needs nonempty 'frame_ids'")
                    try:
                        files = warp_frames_to_files(
                            engine.cache,
                            pose,
                            k,
                            [int(i) for i in ids],
                            Path(engine.config.cache_path) / "warps",
                            n_slots=max(engine.cfg.n_s, len(ids)),
                        )
                    except KeyError as exc:
                        raise ApiError(404, str(exc)) from exc
                    self._send_json({"files": files})
                elif path == "/trajectories" and method == "GET":
                    self._send_json({"trajectories": engine.trajectories.list_ids()})
                elif path == "/trajectories" and method == "POST":
                    doc = engine.trajectories.create(self._read_json())
                    self._send_json(doc, status=201)
                elif path.startswith("/trajectories/"):
                    doc_id = path.split("/", 2)[2]
                    if method == "GET":
                        self._send_json(engine.trajectories.get(doc_id))
                    elif method == "PUT":
                        self._send_json(engine.trajectories.put(doc_id, self._read_json()))
                    else:
                        raise ApiError(405, "method not allowed")
                else:
                    raise ApiError(404, f"no route {method} {path}")
            except ApiError as exc:
                self._send_json({"error": exc.message}, status=exc.status)
            except Exception as exc:  # pragma: no cover - last resort
                self._send_json({"error": f"internal error: {exc}"}, status=500)

        def do_GET(self):
            self._route("GET")

        def do_POST(self):
            self._route("POST")

        def do_PUT(self):
            self._route("PUT")

        def do_OPTIONS(self):
            self._route("OPTIONS")

    host, port = config.host_port()
    server = ThreadingHTTPServer((host, port), Handler)
    server.engine = engine
    return server


def serve(config: ServiceConfig, cache: SceneCache | None = None):
    """Run the service until interrupted, holding the advisory cache lock."""
    lock_path = Path(config.cache_path) / LOCK_FILENAME
    server = make_server(config, cache)
    lock_path.write_text(str(os.getpid()))
    try:
        host, port = server.server_address[:2]
        print(f"serving cache {config.cache_path!r} on http://{host}:{port}")
        server.serve_forever()
    finally:
        server.server_close()
        lock_path.unlink(missing_ok=True)
