// Keyframe recording into a trajectory document the CLI accepts verbatim.

import type { CameraJson, TrajectoryDoc, TrajectoryKeyframe } from "./types.js";

export class TrajectoryRecorder {
    private keyframes: TrajectoryKeyframe[] = [];
    private startedAt: number | null = null;

    constructor(private now: () => number = () => Date.now()) {}

    get count(): number {
        return this.keyframes.length;
    }

    get isEmpty(): boolean {
        return this.keyframes.length === 0;
    }

    record(camera: CameraJson): TrajectoryKeyframe {
        if (this.startedAt === null) {
            this.startedAt = this.now();
        }
        const kf: TrajectoryKeyframe = {
            camera,
            timestamp: (this.now() - this.startedAt) / 1000,
        };
        this.keyframes.push(kf);
        return kf;
    }

    undo(): void {
        this.keyframes.pop();
        if (this.keyframes.length === 0) {
            this.startedAt = null;
        }
    }

    clear(): void {
        this.keyframes = [];
        this.startedAt = null;
    }

    /** Build the export document; empty recordings cannot be exported. */
    export(id: string, name: string): TrajectoryDoc {
        if (this.isEmpty) {
            throw new Error("nothing recorded: add a keyframe first");
        }
        return {
            id,
            name,
            keyframes: this.keyframes.map((kf) => ({
                camera: { ...kf.camera, R: [...kf.camera.R], t: [...kf.camera.t] },
                timestamp: kf.timestamp,
            })),
        };
    }
}
