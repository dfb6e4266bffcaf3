// Planner bootstrap: connect to the service, stream clouds, wire input,
// and keep the live retrieval overlay in sync with the camera.

import { ApiClient, ApiError } from "./api.js";
import { PlannerCamera, type Intrinsics } from "./camera.js";
import { QueryScheduler } from "./scheduler.js";
import { TrajectoryRecorder } from "./recorder.js";
import { drawCoverageHeatmap, PointViewer } from "./viewer.js";
import type { CameraJson, VisibilityResponse } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
};

function banner(message: string, kind: "info" | "error" = "info"): void {
    const el = $("banner");
    el.textContent = message;
    el.className = kind;
    el.style.display = message ? "block" : "none";
}

async function connect(): Promise<void> {
    const url =
        new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8787";
    $("service-url").textContent = url;
    const api = new ApiClient(url);

    let config;
    try {
        config = await api.getConfig();
    } catch (err) {
        banner(
            `Cannot reach the cache service at ${url} - start it with ` +
                `"scenemem serve --cache DIR --cors '*'" and reload. (${err})`,
            "error"
        );
        setTimeout(() => void connect(), 3000);
        return;
    }
    banner("");

    const frames = await api.getFrames();
    const k: Intrinsics =
        frames.length > 0
            ? frames[0].camera
            : { fx: 300, fy: 300, cx: 208, cy: 120, width: 416, height: 240 };

    const camera = new PlannerCamera([0, 0.5, 2], 0.4, 0.35, 8);
    const viewer = new PointViewer(
        $("viewport") as unknown as HTMLCanvasElement,
        camera,
        k
    );
    viewer.setFrameCount(Math.max(config.frame_count, frames.length));
    if (frames.length === 0) {
        banner("Cache is empty: ingest frames, then reload.", "info");
    }

    // Stream the point blobs progressively, oldest first.
    void (async () => {
        for (const frame of frames) {
            try {
                viewer.addCloud(frame.frame_id, await api.fetchPoints(frame.frame_id));
                $("load-state").textContent = `${viewer.loadedCount}/${frames.length} clouds`;
            } catch (err) {
                banner(`point stream failed: ${err}`, "error");
                return;
            }
        }
    })();

    const phiBars = $("phi-bars");
    const recorder = new TrajectoryRecorder();
    const exportBtn = $("export-btn") as HTMLButtonElement;
    const recordBtn = $("record-btn") as HTMLButtonElement;
    exportBtn.disabled = true;

    const showVisibility = (resp: VisibilityResponse): void => {
        viewer.setSelected(resp.selected);
        $("coverage").textContent = `coverage ${(resp.coverage * 100).toFixed(1)}% ` +
            `(grid ${(resp.coverage_grid * 100).toFixed(1)}%) | ` +
            `tokens ${resp.plan.total_tokens} | selected [${resp.selected.join(", ")}]`;
        const maxPhi = Math.max(...resp.phi, 1);
        phiBars.innerHTML = "";
        resp.phi.forEach((phi, frameId) => {
            const bar = document.createElement("div");
            bar.className = resp.selected.includes(frameId) ? "bar selected" : "bar";
            bar.style.height = `${Math.round((phi / maxPhi) * 56) + 2}px`;
            bar.title = `frame ${frameId}: phi=${phi}`;
            phiBars.appendChild(bar);
        });
        if (resp.per_cell) {
            drawCoverageHeatmap(
                $("heatmap") as unknown as HTMLCanvasElement,
                resp.per_cell.shape,
                resp.per_cell.rle
            );
        }
    };

    const scheduler = new QueryScheduler<CameraJson, VisibilityResponse>({
        run: (cam) => api.postVisibility(cam, true),
        onResult: (_cam, resp) => showVisibility(resp),
        onError: (err) => {
            if (err instanceof ApiError) banner(`visibility query: ${err.message}`, "error");
        },
    });
    const queryNow = () => scheduler.submit(camera.toCameraJson(k));
    queryNow();

    // Pointer input: drag orbits, shift-drag pans, wheel dollies.
    const canvas = $("viewport") as unknown as HTMLCanvasElement;
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    canvas.addEventListener("pointerdown", (e) => {
        dragging = true;
        lastX = e.clientX;
        lastY = e.clientY;
        canvas.setPointerCapture(e.pointerId);
    });
    canvas.addEventListener("pointerup", () => (dragging = false));
    canvas.addEventListener("pointermove", (e) => {
        if (!dragging) return;
        const dx = e.clientX - lastX;
        const dy = e.clientY - lastY;
        lastX = e.clientX;
        lastY = e.clientY;
        if (e.shiftKey) {
            camera.pan(dx, dy);
        } else {
            camera.orbit(dx * 0.008, -dy * 0.008);
        }
        queryNow();
    });
    canvas.addEventListener("wheel", (e) => {
        e.preventDefault();
        camera.dolly(Math.exp(e.deltaY * 0.001));
        queryNow();
    });
    window.addEventListener("keydown", (e) => {
        const step = 0.25;
        const moves: Record<string, [number, number, number]> = {
            w: [step, 0, 0],
            s: [-step, 0, 0],
            a: [0, -step, 0],
            d: [0, step, 0],
            q: [0, 0, step],
            e: [0, 0, -step],
        };
        const m = moves[e.key.toLowerCase()];
        if (m) {
            camera.move(...m);
            queryNow();
        }
    });

    recordBtn.addEventListener("click", () => {
        recorder.record(camera.toCameraJson(k));
        $("record-state").textContent = `${recorder.count} keyframes`;
        exportBtn.disabled = recorder.isEmpty;
    });
    $("undo-btn").addEventListener("click", () => {
        recorder.undo();
        $("record-state").textContent = recorder.isEmpty
            ? "nothing recorded"
            : `${recorder.count} keyframes`;
        exportBtn.disabled = recorder.isEmpty;
    });
    exportBtn.addEventListener("click", () => {
        void (async () => {
            const id = (($("traj-id") as HTMLInputElement).value || "planned").trim();
            try {
                const doc = await api.putTrajectory(recorder.export(id, id));
                banner(`saved trajectory '${doc.id}' (${doc.keyframes.length} keyframes)`, "info");
            } catch (err) {
                banner(`export failed: ${err}`, "error");
            }
        })();
    });

    const loop = () => {
        viewer.render();
        requestAnimationFrame(loop);
    };
    loop();
}

void connect();
