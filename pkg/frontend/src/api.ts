import type {
    BindingPayload,
    CreatedSession,
    EnabledActionsResponse,
    EventsResponse,
    FireResult,
    PropertyValue,
    RoleSpec,
    SetPropertyResult,
    StatusMap,
    UndoResult,
} from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Error envelope the service returns for every 4xx. */
export class ApiError extends Error {
    constructor(
        readonly status: number,
        readonly code: string,
        message: string,
    ) {
        super(message);
        this.name = "ApiError";
    }
}

const defaultFetch: FetchLike = (url, init) => fetch(url, init);

/**
 * Thin typed client for the session service. One instance per role token;
 * `withToken` derives a sibling client for another role.
 */
export class ServiceClient {
    constructor(
        readonly base: string,
        private readonly token: string | null = null,
        private readonly fetchLike: FetchLike = defaultFetch,
    ) {}

    withToken(token: string): ServiceClient {
        return new ServiceClient(this.base, token, this.fetchLike);
    }

    private async call<T>(
        method: string,
        path: string,
        body?: unknown,
    ): Promise<T> {
        const headers: Record<string, string> = {};
        if (body !== undefined) headers["Content-Type"] = "application/json";
        if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
        const resp = await this.fetchLike(this.base + path, {
            method,
            headers,
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        if (!resp.ok) {
            let code = "error";
            let message = `HTTP ${resp.status}`;
            try {
                const data = await resp.json();
                if (typeof data?.code === "string") code = data.code;
                if (typeof data?.message === "string") message = data.message;
            } catch {
                // non-JSON error body, keep the fallback text
            }
            throw new ApiError(resp.status, code, message);
        }
        return (await resp.json()) as T;
    }

    createSession(
        model: unknown,
        roles: RoleSpec[],
        mode?: string,
    ): Promise<CreatedSession> {
        const body: Record<string, unknown> = { model, roles };
        if (mode !== undefined) body.mode = mode;
        return this.call("POST", "/sessions", body);
    }

    status(session: string, since = 0): Promise<StatusMap> {
        return this.call("GET", `/sessions/${session}/status?since=${since}`);
    }

    enabledActions(session: string): Promise<EnabledActionsResponse> {
        return this.call("GET", `/sessions/${session}/actions/enabled`);
    }

    events(session: string, since = 0): Promise<EventsResponse> {
        return this.call("GET", `/sessions/${session}/events?since=${since}`);
    }

    fireRule(session: string, binding: BindingPayload): Promise<FireResult> {
        return this.call("POST", `/sessions/${session}/actions`, {
            action: "fire-rule",
            binding,
        });
    }

    setProperty(
        session: string,
        subject: string,
        property: string | null,
        value: PropertyValue,
    ): Promise<SetPropertyResult> {
        return this.call("POST", `/sessions/${session}/actions`, {
            action: "set-property",
            subject,
            property,
            value,
        });
    }

    annotate(
        session: string,
        text: string,
        subject?: string,
    ): Promise<{ seq: number }> {
        const body: Record<string, unknown> = { action: "annotate", text };
        if (subject !== undefined) body.subject = subject;
        return this.call("POST", `/sessions/${session}/actions`, body);
    }

    undo(session: string, toVersion?: number): Promise<UndoResult> {
        const body: Record<string, unknown> = {};
        if (toVersion !== undefined) body.to_version = toVersion;
        return this.call("POST", `/sessions/${session}/undo`, body);
    }
}
