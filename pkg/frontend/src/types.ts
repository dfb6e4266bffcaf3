// Wire types mirroring the service's JSON schemas.

export interface CameraJson {
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    width: number;
    height: number;
    R: number[]; // 9 entries, row-major, world-to-camera
    t: number[]; // 3 entries
}

export interface FrameInfo {
    frame_id: number;
    camera: CameraJson;
    valid_points: number;
}

export interface ConfigInfo {
    n_s: number;
    delta: number;
    subsample_d: number;
    scene_scale: number | null;
    frame_count: number;
    layout: string;
}

export interface PlanSlotJson {
    kind: string;
    n: number;
    m: number;
    assignment: (number | null)[];
    tokens: number;
}

export interface VisibilityResponse {
    phi: number[];
    selected: number[];
    coverage: number;
    coverage_grid: number;
    plan: { slots: PlanSlotJson[]; total_tokens: number };
    per_cell?: { shape: [number, number]; rle: number[] };
}

export interface TrajectoryKeyframe {
    camera: CameraJson;
    timestamp: number;
}

export interface TrajectoryDoc {
    id: string;
    name: string;
    keyframes: TrajectoryKeyframe[];
    created?: string;
    modified?: string;
}
