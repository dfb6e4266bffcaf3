"""Run the HTTP service programmatically and talk to every endpoint.

The long-running form is `scenemem serve --cache DIR --bind host:port`;
the browser planner in frontend/ consumes exactly these endpoints. Here
the service runs in a thread just long enough to exercise the API.
"""

import json
import struct
import threading
import urllib.request
from pathlib import Path

import numpy as np

from scenemem.cache import SceneCache, save_cache
from scenemem.geometry import Intrinsics, camera_to_json
from scenemem.service import ServiceConfig, make_server
from scenemem.synth import AnalyticScene, Plane, Sphere, make_trajectory, render_depth

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

k = Intrinsics(fx=160.0, fy=160.0, cx=104.0, cy=60.0, width=208, height=120)
scene = AnalyticScene([Plane((0, 0, 0), (0, 1, 0)), Sphere((0, 1, 3), 1.0)])
cache = SceneCache(subsample_d=8)
for pose, kk in make_trajectory("orbit", center=(0, 1, 3), radius=5.0, n=12, elevation=1.5, intrinsics=k):
    cache.insert_frame(render_depth(scene, pose, kk), pose, kk)
cache_dir = OUT / "service_cache"
save_cache(cache, cache_dir)

server = make_server(ServiceConfig(cache_path=str(cache_dir), bind="127.0.0.1:0", cors_origins=("*",)))
threading.Thread(target=server.serve_forever, daemon=True).start()
host, port = server.server_address[:2]
base = f"http://{host}:{port}"
print(f"Service up at {base}")


def get(path):
    with urllib.request.urlopen(f"{base}{path}", timeout=30) as resp:
        return json.loads(resp.read())


def post(path, payload):
    req = urllib.request.Request(f"{base}{path}", data=json.dumps(payload).encode())
    req.add_header("Content-Type", "application/json")
    with urllib.request.urlopen(req, timeout=30) as resp:
        return json.loads(resp.read())


config = get("/config")
print(f"GET /config -> n_s={config['n_s']}, delta={config['delta']}, frames={config['frame_count']}")

frames = get("/frames")["frames"]
print(f"GET /frames -> {len(frames)} frames")

with urllib.request.urlopen(f"{base}/frames/0/points", timeout=30) as resp:
    blob = resp.read()
(count,) = struct.unpack("<I", blob[:4])
pts = np.frombuffer(blob[4:], dtype="<f4").reshape(count, 3)
print(f"GET /frames/0/points -> {count} xyz points, binary payload {len(blob)} bytes")

rec = cache.get_frame(3)
vis = post("/visibility", {"camera": camera_to_json(rec.pose, rec.intrinsics)})
print(f"POST /visibility -> selected {vis['selected']}, coverage {vis['coverage']:.3f}, "
      f"plan tokens {vis['plan']['total_tokens']}")

doc = {
    "id": "demo-loop",
    "name": "demo trajectory",
    "keyframes": [
        {"camera": camera_to_json(p, kk), "timestamp": float(i)}
        for i, (p, kk) in enumerate(
            make_trajectory("orbit", center=(0, 1, 3), radius=4.0, n=4, intrinsics=k)
        )
    ],
}
created = post("/trajectories", doc)
print(f"POST /trajectories -> stored {created['id']!r} with {len(created['keyframes'])} keyframes")
print(f"GET /trajectories -> {get('/trajectories')['trajectories']}")

server.shutdown()
server.server_close()
print("Service stopped. For the interactive planner, run:")
print(f"  scenemem serve --cache {cache_dir} --bind 127.0.0.1:8787 --cors '*'")
print("  then open the frontend (see frontend/README.md).")
