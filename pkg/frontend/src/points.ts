// Binary point blob decoding and per-frame display colors.

/** Parse a /frames/{id}/points payload: u32 LE count + float32 xyz triples. */
export function parsePointBlob(buffer: ArrayBuffer): Float32Array {
    if (buffer.byteLength < 4) {
        throw new Error(`point blob too short: ${buffer.byteLength} bytes`);
    }
    const count = new DataView(buffer).getUint32(0, true);
    const expected = 4 + count * 12;
    if (buffer.byteLength !== expected) {
        throw new Error(
            `point blob size mismatch: ${buffer.byteLength} bytes for ${count} points`
        );
    }
    return new Float32Array(buffer, 4, count * 3);
}

/**
 * Color for a frame by age: old frames cool blue, recent frames warm
 * orange, so it is visible at a glance when retrieval reaches far back
 * into history.
 */
export function frameAgeColor(frameId: number, frameCount: number): [number, number, number] {
    const a = frameCount <= 1 ? 1 : frameId / (frameCount - 1);
    return [0.25 + 0.65 * a, 0.35 + 0.25 * a, 0.85 - 0.55 * a];
}

/** Tint applied to frames in the current greedy selection. */
export const SELECTED_COLOR: [number, number, number] = [0.2, 1.0, 0.45];
