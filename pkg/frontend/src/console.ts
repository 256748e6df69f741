import { ApiError, ServiceClient } from "./api";
import type { PropertyValue, SessionEvent } from "./types";
import {
    acknowledgeChanges,
    ActionFormModel,
    deriveActions,
    deriveMap,
    MapViewModel,
} from "./viewmodel";

export interface ConsoleOptions {
    client: ServiceClient; // unauthenticated base client
    session: string;
    tokens: Record<string, string>;
    role: string;
    pollMs?: number;
}

export interface ConsoleState {
    role: string;
    roles: string[];
    map: MapViewModel | null;
    actions: ActionFormModel | null;
    timeline: SessionEvent[];
    banner: string | null;
    toast: string | null;
    // facilitator side panel: another role's view, fetched on demand
    peek: { role: string; map: MapViewModel } | null;
}

type Listener = (state: ConsoleState) => void;

const MAX_BACKOFF = 8;

/**
 * Session orchestrator: one status poll in flight at a time, action
 * submissions queued first-in first-out, held view retained across network
 * trouble. Rendering is somebody else's job; subscribe and draw the state.
 */
export class ExerciseConsole {
    private readonly clients = new Map<string, ServiceClient>();
    private readonly listeners: Listener[] = [];
    private readonly pollMs: number;

    private map: MapViewModel | null = null;
    private actions: ActionFormModel | null = null;
    private timeline: SessionEvent[] = [];
    private banner: string | null = null;
    private toast: string | null = null;
    private peeked: { role: string; map: MapViewModel } | null = null;

    private role: string;
    private lastSeq = 0;
    private failures = 0;
    private epoch = 0; // bumped on role switch so stale polls drop out
    private stopped = true;
    private timer: ReturnType<typeof setTimeout> | null = null;
    private inFlight: Promise<void> | null = null;
    private pollAgain = false;
    private queue: Promise<unknown> = Promise.resolve();

    constructor(private readonly options: ConsoleOptions) {
        this.pollMs = options.pollMs ?? 1000;
        this.role = options.role;
        if (!(this.role in options.tokens)) {
            throw new Error(`no token for role ${this.role}`);
        }
    }

    get state(): ConsoleState {
        return {
            role: this.role,
            roles: Object.keys(this.options.tokens),
            map: this.map,
            actions: this.actions,
            timeline: this.timeline,
            banner: this.banner,
            toast: this.toast,
            peek: this.peeked,
        };
    }

    subscribe(listener: Listener): () => void {
        this.listeners.push(listener);
        listener(this.state);
        return () => {
            const at = this.listeners.indexOf(listener);
            if (at >= 0) this.listeners.splice(at, 1);
        };
    }

    private emit(): void {
        const snapshot = this.state;
        for (const listener of [...this.listeners]) listener(snapshot);
    }

    private client(): ServiceClient {
        let client = this.clients.get(this.role);
        if (!client) {
            client = this.options.client.withToken(this.options.tokens[this.role]);
            this.clients.set(this.role, client);
        }
        return client;
    }

    start(): Promise<void> {
        this.stopped = false;
        return this.poll();
    }

    stop(): void {
        this.stopped = true;
        if (this.timer !== null) clearTimeout(this.timer);
        this.timer = null;
    }

    /** Refresh now; coalesces with a poll already in flight. */
    poll(): Promise<void> {
        if (this.inFlight) {
            this.pollAgain = true;
            return this.inFlight;
        }
        this.inFlight = this.pollOnce().finally(() => {
            this.inFlight = null;
            if (this.pollAgain) {
                this.pollAgain = false;
                void this.poll();
            } else {
                this.schedule();
            }
        });
        return this.inFlight;
    }

    private schedule(): void {
        if (this.stopped) return;
        if (this.timer !== null) clearTimeout(this.timer);
        const factor = Math.min(2 ** this.failures, MAX_BACKOFF);
        this.timer = setTimeout(() => void this.poll(), this.pollMs * factor);
    }

    private async pollOnce(): Promise<void> {
        const epoch = this.epoch;
        const session = this.options.session;
        const client = this.client();
        try {
            const [status, enabled, events] = await Promise.all([
                client.status(session, this.map?.version ?? 0),
                client.enabledActions(session),
                client.events(session, this.lastSeq),
            ]);
            if (epoch !== this.epoch) return; // role changed mid-flight
            this.map = deriveMap(status, this.map);
            this.actions = deriveActions(enabled, this.map.facilitator, this.actions);
            for (const event of events.events) {
                if (event.seq > this.lastSeq) {
                    this.timeline.push(event);
                    this.lastSeq = event.seq;
                }
            }
            this.banner = null;
            this.failures = 0;
        } catch (err) {
            if (epoch !== this.epoch) return;
            this.failures += 1;
            this.banner = describe(err); // stale view stays up on purpose
        }
        this.emit();
    }

    switchRole(role: string): Promise<void> {
        if (!(role in this.options.tokens)) {
            throw new Error(`no token for role ${role}`);
        }
        if (role === this.role) return this.poll();
        this.role = role;
        this.epoch += 1;
        // nothing cached for the old role may survive the switch
        this.map = null;
        this.actions = null;
        this.timeline = [];
        this.lastSeq = 0;
        this.toast = null;
        this.banner = null;
        this.peeked = null;
        this.emit();
        this.pollAgain = this.inFlight !== null;
        return this.inFlight ? this.inFlight : this.poll();
    }

    acknowledge(): void {
        if (this.map) {
            this.map = acknowledgeChanges(this.map);
            this.emit();
        }
    }

    /**
     * One-shot look at another role's map, shown next to the main view so a
     * facilitator can narrate what a participant is seeing. Never cached:
     * each call re-fetches under that role's own token.
     */
    async peekRole(role: string): Promise<void> {
        const token = this.options.tokens[role];
        if (!token) throw new Error(`no token for role ${role}`);
        try {
            const status = await this.options.client
                .withToken(token)
                .status(this.options.session);
            this.peeked = { role, map: deriveMap(status) };
        } catch (err) {
            this.banner = describe(err);
        }
        this.emit();
    }

    clearPeek(): void {
        if (this.peeked) {
            this.peeked = null;
            this.emit();
        }
    }

    private enqueue<T>(task: () => Promise<T>): Promise<T> {
        const next = this.queue.then(task, task);
        this.queue = next.catch(() => undefined);
        return next;
    }

    fire(key: string): Promise<void> {
        return this.enqueue(async () => {
            const entry = this.actions?.bindings.find((b) => b.key === key);
            if (!entry) {
                this.toast = "that action is no longer offered";
                this.emit();
                return;
            }
            const client = this.client();
            try {
                const result = await client.fireRule(
                    this.options.session,
                    entry.action.binding,
                );
                this.toast =
                    `${entry.rule}: ${result.changes.length} ` +
                    (result.changes.length === 1 ? "change" : "changes");
                await this.poll();
            } catch (err) {
                this.settleActionError(err, key);
            }
            this.emit();
        });
    }

    setProperty(
        subject: string,
        property: string | null,
        value: PropertyValue,
    ): Promise<void> {
        return this.enqueue(async () => {
            try {
                const result = await this.client().setProperty(
                    this.options.session, subject, property, value,
                );
                this.toast = `set: ${result.changes.length} ` +
                    (result.changes.length === 1 ? "change" : "changes");
                await this.poll();
            } catch (err) {
                this.settleActionError(err);
            }
            this.emit();
        });
    }

    annotate(text: string, subject?: string): Promise<void> {
        return this.enqueue(async () => {
            try {
                const noted = await this.client().annotate(
                    this.options.session, text, subject,
                );
                this.toast = `noted (#${noted.seq})`;
                await this.poll();
            } catch (err) {
                this.settleActionError(err);
            }
            this.emit();
        });
    }

    undo(toVersion?: number): Promise<void> {
        return this.enqueue(async () => {
            try {
                const result = await this.client().undo(
                    this.options.session, toVersion,
                );
                this.toast = `restored version ${result.restored_version}`;
                await this.poll();
            } catch (err) {
                this.settleActionError(err);
            }
            this.emit();
        });
    }

    private settleActionError(err: unknown, key?: string): void {
        if (err instanceof ApiError && err.status === 409) {
            // lost the race: somebody fired first, refresh what is enabled
            this.toast = `not enabled any more: ${err.message}`;
            void this.poll();
            return;
        }
        if (err instanceof ApiError && err.status === 403 && key) {
            if (this.actions) {
                this.actions = {
                    ...this.actions,
                    bindings: this.actions.bindings.map((b) =>
                        b.key === key ? { ...b, disabledReason: err.message } : b,
                    ),
                };
            }
            return;
        }
        this.banner = describe(err);
    }
}

function describe(err: unknown): string {
    if (err instanceof ApiError) return `${err.code}: ${err.message}`;
    if (err instanceof Error) return `service unreachable: ${err.message}`;
    return "service unreachable";
}
