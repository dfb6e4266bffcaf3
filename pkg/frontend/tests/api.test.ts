import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { parsePointBlob } from "../src/points.js";
import type { VisibilityResponse } from "../src/types.js";

const CAMERA = {
    fx: 300, fy: 300, cx: 208, cy: 120, width: 416, height: 240,
    R: [1, 0, 0, 0, 1, 0, 0, 0, 1],
    t: [0, 0, 0],
};

function jsonResponse(obj: unknown, status = 200): Response {
    return new Response(JSON.stringify(obj), {
        status,
        headers: { "Content-Type": "application/json" },
    });
}

describe("ApiClient", () => {
    it("passes visibility responses through verbatim", async () => {
        // The invariant behind UI/CLI equivalence: nothing is recomputed
        // client-side, the displayed numbers are the service's numbers.
        const payload: VisibilityResponse = {
            phi: [5, 0, 9],
            selected: [2, 0],
            coverage: 0.875,
            coverage_grid: 0.5,
            plan: { slots: [], total_tokens: 1234 },
        };
        const calls: Array<{ url: string; init?: RequestInit }> = [];
        const api = new ApiClient("http://svc", async (url, init) => {
            calls.push({ url: String(url), init });
            return jsonResponse(payload);
        });
        const got = await api.postVisibility(CAMERA, true);
        expect(got).toEqual(payload);
        expect(calls[0].url).toBe("http://svc/visibility");
        const body = JSON.parse(String(calls[0].init?.body));
        expect(body.camera).toEqual(CAMERA);
        expect(body.include_cells).toBe(true);
    });

    it("surfaces service error messages with their status", async () => {
        const api = new ApiClient("http://svc", async () =>
            jsonResponse({ error: "rotation not orthonormal" }, 400)
        );
        await expect(api.postVisibility(CAMERA)).rejects.toThrowError(
            /rotation not orthonormal/
        );
        try {
            await api.postVisibility(CAMERA);
        } catch (err) {
            expect(err).toBeInstanceOf(ApiError);
            expect((err as ApiError).status).toBe(400);
        }
    });

    it("fetches and parses binary point blobs", async () => {
        const pts = new Float32Array([1, 2, 3, 4, 5, 6]);
        const blob = new ArrayBuffer(4 + pts.byteLength);
        new DataView(blob).setUint32(0, 2, true);
        new Float32Array(blob, 4).set(pts);
        const api = new ApiClient("http://svc/", async (url) => {
            expect(String(url)).toBe("http://svc/frames/7/points");
            return new Response(blob);
        });
        const got = await api.fetchPoints(7);
        expect(Array.from(got)).toEqual([1, 2, 3, 4, 5, 6]);
    });

    it("puts trajectory documents to their id route", async () => {
        const doc = {
            id: "loop",
            name: "loop",
            keyframes: [{ camera: CAMERA, timestamp: 0 }],
        };
        const api = new ApiClient("http://svc", async (url, init) => {
            expect(String(url)).toBe("http://svc/trajectories/loop");
            expect(init?.method).toBe("PUT");
            return jsonResponse({ ...doc, created: "now", modified: "now" });
        });
        const saved = await api.putTrajectory(doc);
        expect(saved.created).toBe("now");
    });
});

describe("parsePointBlob", () => {
    it("round-trips counts and coordinates", () => {
        const blob = new ArrayBuffer(4 + 12);
        new DataView(blob).setUint32(0, 1, true);
        new Float32Array(blob, 4).set([9, -8, 7.5]);
        expect(Array.from(parsePointBlob(blob))).toEqual([9, -8, 7.5]);
    });

    it("rejects truncated payloads", () => {
        const blob = new ArrayBuffer(4 + 8);
        new DataView(blob).setUint32(0, 1, true);
        expect(() => parsePointBlob(blob)).toThrowError(/size mismatch/);
    });

    it("rejects empty buffers", () => {
        expect(() => parsePointBlob(new ArrayBuffer(2))).toThrowError(/too short/);
    });
});
