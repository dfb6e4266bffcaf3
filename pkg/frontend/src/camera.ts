// Virtual camera state and its conversion to the service's camera JSON.
// This is display/query plumbing only: every visibility or coverage
// number shown in the UI comes from the service, never from here.

import type { CameraJson } from "./types.js";

export interface Intrinsics {
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    width: number;
    height: number;
}

type Vec3 = [number, number, number];

const sub = (a: Vec3, b: Vec3): Vec3 => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const add = (a: Vec3, b: Vec3): Vec3 => [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
const scale = (a: Vec3, s: number): Vec3 => [a[0] * s, a[1] * s, a[2] * s];
const dot = (a: Vec3, b: Vec3) => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
const cross = (a: Vec3, b: Vec3): Vec3 => [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
];
const norm = (a: Vec3) => Math.sqrt(dot(a, a));
const normalize = (a: Vec3): Vec3 => {
    const n = norm(a);
    return n > 0 ? scale(a, 1 / n) : [0, 0, 1];
};

/**
 * Orbit camera: azimuth/elevation around a target point, plus free pan
 * and dolly (WASD). Produces a world-to-camera [R | t] with row-major R,
 * the convention the service expects.
 */
export class PlannerCamera {
    target: Vec3;
    azimuth: number; // radians around world y
    elevation: number; // radians above the horizon
    distance: number;

    constructor(target: Vec3 = [0, 0, 3], azimuth = 0, elevation = 0.3, distance = 6) {
        this.target = target;
        this.azimuth = azimuth;
        this.elevation = elevation;
        this.distance = distance;
    }

    eye(): Vec3 {
        const ce = Math.cos(this.elevation);
        return add(this.target, [
            this.distance * ce * Math.cos(this.azimuth),
            this.distance * Math.sin(this.elevation),
            this.distance * ce * Math.sin(this.azimuth),
        ]);
    }

    /** Row-major world-to-camera rotation (rows are right, down-ish, forward). */
    rotationRows(): [Vec3, Vec3, Vec3] {
        const z = normalize(sub(this.target, this.eye()));
        let x = cross([0, 1, 0], z);
        if (norm(x) < 1e-9) {
            x = cross([1, 0, 0], z);
        }
        x = normalize(x);
        const y = cross(z, x);
        return [x, y, z];
    }

    orbit(dAzimuth: number, dElevation: number): void {
        this.azimuth += dAzimuth;
        const lim = Math.PI / 2 - 0.01;
        this.elevation = Math.min(lim, Math.max(-lim, this.elevation + dElevation));
    }

    dolly(factor: number): void {
        this.distance = Math.min(200, Math.max(0.05, this.distance * factor));
    }

    /** Pan the target in the camera's screen plane. */
    pan(dxPixels: number, dyPixels: number): void {
        const [x, y] = this.rotationRows();
        const s = this.distance * 0.0015;
        this.target = add(this.target, add(scale(x, -dxPixels * s), scale(y, -dyPixels * s)));
    }

    /** WASD-style move of the whole rig along camera axes. */
    move(forward: number, right: number, up: number): void {
        const [x, , z] = this.rotationRows();
        const step = add(
            add(scale(z, forward), scale(x, right)),
            scale([0, 1, 0] as Vec3, up)
        );
        this.target = add(this.target, step);
    }

    toCameraJson(k: Intrinsics): CameraJson {
        const [x, y, z] = this.rotationRows();
        const eye = this.eye();
        // t = -R * eye
        const t: Vec3 = [-dot(x, eye), -dot(y, eye), -dot(z, eye)];
        return {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            R: [...x, ...y, ...z],
            t: [...t],
        };
    }

    /** Column-major 4x4 view matrix for WebGL rendering. */
    viewMatrix(): Float32Array {
        const [x, y, z] = this.rotationRows();
        const eye = this.eye();
        const t: Vec3 = [-dot(x, eye), -dot(y, eye), -dot(z, eye)];
        // prettier-ignore
        return new Float32Array([
            x[0], y[0], z[0], 0,
            x[1], y[1], z[1], 0,
            x[2], y[2], z[2], 0,
            t[0], t[1], t[2], 1,
        ]);
    }
}

/** Column-major perspective projection matching a pinhole fy/height FOV. */
export function projectionMatrix(
    k: Intrinsics,
    aspect: number,
    near = 0.05,
    far = 500
): Float32Array {
    const fovScale = (2 * k.fy) / k.height; // cot(fov_y / 2)
    const a = far / (far - near);
    // prettier-ignore
    return new Float32Array([
        fovScale / aspect, 0, 0, 0,
        0, -fovScale, 0, 0,
        0, 0, a, 1,
        0, 0, -a * near, 0,
    ]);
}
