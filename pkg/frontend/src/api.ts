// Thin client over the cache service. Responses pass through verbatim:
// the planner displays exactly what the service computed.

import type {
    CameraJson,
    ConfigInfo,
    FrameInfo,
    TrajectoryDoc,
    VisibilityResponse,
} from "./types.js";
import { parsePointBlob } from "./points.js";

export class ApiError extends Error {
    constructor(
        public status: number,
        message: string
    ) {
        super(message);
    }
}

async function jsonOrThrow(resp: Response): Promise<any> {
    if (!resp.ok) {
        let detail = resp.statusText;
        try {
            const body = await resp.json();
            if (body && typeof body.error === "string") detail = body.error;
        } catch {
            // non-JSON error body; keep the status text
        }
        throw new ApiError(resp.status, detail);
    }
    return resp.json();
}

export class ApiClient {
    constructor(
        private baseUrl: string,
        private fetchFn: typeof fetch = fetch
    ) {
        this.baseUrl = baseUrl.replace(/\/$/, "");
    }

    async getConfig(): Promise<ConfigInfo> {
        return jsonOrThrow(await this.fetchFn(`${this.baseUrl}/config`));
    }

    async getFrames(): Promise<FrameInfo[]> {
        const body = await jsonOrThrow(await this.fetchFn(`${this.baseUrl}/frames`));
        return body.frames;
    }

    async fetchPoints(frameId: number): Promise<Float32Array> {
        const resp = await this.fetchFn(`${this.baseUrl}/frames/${frameId}/points`);
        if (!resp.ok) {
            throw new ApiError(resp.status, `points for frame ${frameId}: ${resp.statusText}`);
        }
        return parsePointBlob(await resp.arrayBuffer());
    }

    async postVisibility(
        camera: CameraJson,
        includeCells = true,
        signal?: AbortSignal
    ): Promise<VisibilityResponse> {
        const resp = await this.fetchFn(`${this.baseUrl}/visibility`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ camera, include_cells: includeCells }),
            signal,
        });
        return jsonOrThrow(resp);
    }

    async listTrajectories(): Promise<string[]> {
        const body = await jsonOrThrow(await this.fetchFn(`${this.baseUrl}/trajectories`));
        return body.trajectories;
    }

    async putTrajectory(doc: TrajectoryDoc): Promise<TrajectoryDoc> {
        const resp = await this.fetchFn(`${this.baseUrl}/trajectories/${doc.id}`, {
            method: "PUT",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(doc),
        });
        return jsonOrThrow(resp);
    }

    async getTrajectory(id: string): Promise<TrajectoryDoc> {
        return jsonOrThrow(await this.fetchFn(`${this.baseUrl}/trajectories/${id}`));
    }
}
