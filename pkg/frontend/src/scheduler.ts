// Debounced, single-in-flight visibility querying.
//
// Camera motion fires continuously; the service should only see settled
// poses (150 ms of quiet), at most one request should be in flight, and
// a response must be dropped if a newer camera state superseded it - the
// overlay must never show stale selections.

export const DEBOUNCE_MS = 150;

export interface SchedulerHooks<Q, R> {
    run: (query: Q) => Promise<R>;
    onResult: (query: Q, result: R) => void;
    onError?: (err: unknown) => void;
    debounceMs?: number;
    setTimeoutFn?: typeof setTimeout;
    clearTimeoutFn?: typeof clearTimeout;
}

export class QueryScheduler<Q, R> {
    private pendingTimer: ReturnType<typeof setTimeout> | null = null;
    private latestQuery: Q | null = null;
    private inFlight = false;
    private generation = 0;
    private readonly debounceMs: number;
    private readonly setT: typeof setTimeout;
    private readonly clearT: typeof clearTimeout;

    constructor(private hooks: SchedulerHooks<Q, R>) {
        this.debounceMs = hooks.debounceMs ?? DEBOUNCE_MS;
        this.setT = hooks.setTimeoutFn ?? setTimeout;
        this.clearT = hooks.clearTimeoutFn ?? clearTimeout;
    }

    /** Register a new camera state; the query fires once motion settles. */
    submit(query: Q): void {
        this.latestQuery = query;
        this.generation += 1;
        if (this.pendingTimer !== null) {
            this.clearT(this.pendingTimer);
        }
        this.pendingTimer = this.setT(() => {
            this.pendingTimer = null;
            void this.fire();
        }, this.debounceMs);
    }

    private async fire(): Promise<void> {
        if (this.inFlight || this.latestQuery === null) {
            return;
        }
        const query = this.latestQuery;
        const generation = this.generation;
        this.inFlight = true;
        try {
            const result = await this.hooks.run(query);
            // Deliver only if no newer camera state arrived meanwhile.
            if (generation === this.generation) {
                this.hooks.onResult(query, result);
            }
        } catch (err) {
            if (generation === this.generation) {
                this.hooks.onError?.(err);
            }
        } finally {
            this.inFlight = false;
            // A newer state queued while we were busy: run it now.
            if (generation !== this.generation && this.pendingTimer === null) {
                void this.fire();
            }
        }
    }
}
