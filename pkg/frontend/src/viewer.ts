// WebGL point cloud viewer: one buffer per cached frame, colored by age,
// selected frames tinted, plus a 2D canvas heatmap of target coverage.

import { PlannerCamera, projectionMatrix, type Intrinsics } from "./camera.js";
import { frameAgeColor, SELECTED_COLOR } from "./points.js";

const VERT_SRC = `
attribute vec3 aPos;
uniform mat4 uView;
uniform mat4 uProj;
uniform float uSize;
void main() {
    gl_Position = uProj * uView * vec4(aPos, 1.0);
    gl_PointSize = uSize;
}
`;

const FRAG_SRC = `
precision mediump float;
uniform vec3 uColor;
void main() {
    gl_FragColor = vec4(uColor, 1.0);
}
`;

interface FrameCloud {
    buffer: WebGLBuffer;
    count: number;
}

export class PointViewer {
    private gl: WebGLRenderingContext;
    private program: WebGLProgram;
    private clouds = new Map<number, FrameCloud>();
    private selected = new Set<number>();
    private frameCount = 1;
    private aPos: number;
    private uView: WebGLUniformLocation;
    private uProj: WebGLUniformLocation;
    private uColor: WebGLUniformLocation;
    private uSize: WebGLUniformLocation;

    constructor(
        private canvas: HTMLCanvasElement,
        public camera: PlannerCamera,
        private intrinsics: Intrinsics
    ) {
        const gl = canvas.getContext("webgl");
        if (!gl) {
            throw new Error("WebGL unavailable");
        }
        this.gl = gl;
        this.program = this.buildProgram();
        this.aPos = gl.getAttribLocation(this.program, "aPos");
        this.uView = gl.getUniformLocation(this.program, "uView")!;
        this.uProj = gl.getUniformLocation(this.program, "uProj")!;
        this.uColor = gl.getUniformLocation(this.program, "uColor")!;
        this.uSize = gl.getUniformLocation(this.program, "uSize")!;
        gl.enable(gl.DEPTH_TEST);
        gl.clearColor(0.07, 0.08, 0.1, 1.0);
    }

    private buildProgram(): WebGLProgram {
        const gl = this.gl;
        const compile = (type: number, src: string) => {
            const shader = gl.createShader(type)!;
            gl.shaderSource(shader, src);
            gl.compileShader(shader);
            if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
                throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
            }
            return shader;
        };
        const program = gl.createProgram()!;
        gl.attachShader(program, compile(gl.VERTEX_SHADER, VERT_SRC));
        gl.attachShader(program, compile(gl.FRAGMENT_SHADER, FRAG_SRC));
        gl.linkProgram(program);
        if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
            throw new Error(gl.getProgramInfoLog(program) ?? "program link failed");
        }
        return program;
    }

    setFrameCount(count: number): void {
        this.frameCount = Math.max(count, 1);
    }

    addCloud(frameId: number, points: Float32Array): void {
        const gl = this.gl;
        const buffer = gl.createBuffer()!;
        gl.bindBuffer(gl.ARRAY_BUFFER, buffer);
        gl.bufferData(gl.ARRAY_BUFFER, points, gl.STATIC_DRAW);
        this.clouds.set(frameId, { buffer, count: points.length / 3 });
    }

    setSelected(frameIds: number[]): void {
        this.selected = new Set(frameIds);
    }

    get loadedCount(): number {
        return this.clouds.size;
    }

    render(): void {
        const gl = this.gl;
        const w = this.canvas.clientWidth || this.canvas.width;
        const h = this.canvas.clientHeight || this.canvas.height;
        if (this.canvas.width !== w || this.canvas.height !== h) {
            this.canvas.width = w;
            this.canvas.height = h;
        }
        gl.viewport(0, 0, w, h);
        gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
        gl.useProgram(this.program);
        gl.uniformMatrix4fv(this.uView, false, this.camera.viewMatrix());
        gl.uniformMatrix4fv(this.uProj, false, projectionMatrix(this.intrinsics, w / h));

        for (const [frameId, cloud] of this.clouds) {
            const isSel = this.selected.has(frameId);
            const color = isSel ? SELECTED_COLOR : frameAgeColor(frameId, this.frameCount);
            gl.uniform3f(this.uColor, color[0], color[1], color[2]);
            gl.uniform1f(this.uSize, isSel ? 3.5 : 2.0);
            gl.bindBuffer(gl.ARRAY_BUFFER, cloud.buffer);
            gl.enableVertexAttribArray(this.aPos);
            gl.vertexAttribPointer(this.aPos, 3, gl.FLOAT, false, 0, 0);
            gl.drawArrays(gl.POINTS, 0, cloud.count);
        }
    }
}

/** Paint the RLE coverage mask from /visibility onto a small canvas. */
export function drawCoverageHeatmap(
    canvas: HTMLCanvasElement,
    shape: [number, number],
    rle: number[]
): void {
    const [rows, cols] = shape;
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    canvas.width = cols;
    canvas.height = rows;
    const img = ctx.createImageData(cols, rows);
    let idx = 0;
    let value = 0; // runs start with the zero run
    for (const run of rle) {
        for (let i = 0; i < run; i++, idx++) {
            const o = idx * 4;
            img.data[o] = value ? 46 : 30;
            img.data[o + 1] = value ? 204 : 34;
            img.data[o + 2] = value ? 113 : 40;
            img.data[o + 3] = value ? 230 : 120;
        }
        value = 1 - value;
    }
    ctx.putImageData(img, 0, 0);
}
