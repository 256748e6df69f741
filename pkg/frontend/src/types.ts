// Wire types for the session service. Shapes mirror the HTTP responses
// exactly; the view model layer owns anything derived.

export type PropertyValue = boolean | number | string | null;

export interface ImpactNote {
    category: string;
    severity: string;
}

export interface StatusContainer {
    id: string;
    name: string;
    parent: string | null;
    properties: Record<string, PropertyValue>;
    addresses: string[];
    impact?: ImpactNote;
}

export interface StatusLink {
    id: string;
    a: string;
    b: string;
    properties: Record<string, PropertyValue>;
}

export interface PropertyChange {
    subject: string;
    property: string;
    old: PropertyValue;
    new: PropertyValue;
}

export interface VersionChanges {
    version: number;
    changes: PropertyChange[];
}

export interface StatusMap {
    session: string;
    mode: string;
    state_version: number;
    containers: StatusContainer[];
    links: StatusLink[];
    facts: Record<string, PropertyValue>;
    changes: VersionChanges[];
    // present only when the role sees the whole model
    state_hash?: string;
}

export interface LinkSitePayload {
    type: "link";
    link: string;
    source: string;
    target: string;
}

export interface NestSitePayload {
    type: "parent-child" | "multi-child";
    parent: string;
    children: string[];
}

export interface SiblingSitePayload {
    type: "sibling";
    parent: string;
    source: string;
    target: string;
}

export interface ConventionalSitePayload {
    type: "conventional";
}

export type SitePayload =
    | LinkSitePayload
    | NestSitePayload
    | SiblingSitePayload
    | ConventionalSitePayload;

export interface BindingPayload {
    rule: string;
    site: SitePayload;
}

export interface EnabledAction {
    binding: BindingPayload;
    rule: string;
    label: string;
}

export interface EnabledActionsResponse {
    state_version: number;
    actions: EnabledAction[];
}

export interface SessionEvent {
    seq: number;
    event: "fire-rule" | "set-property" | "annotate" | "undo" | "restore";
    role: string;
    redacted?: true;
    binding?: BindingPayload;
    version?: number;
    subject?: string | null;
    property?: string | null;
    value?: PropertyValue;
    text?: string;
    to_version?: number;
}

export interface EventsResponse {
    events: SessionEvent[];
    state_version: number;
}

export interface FireResult {
    state_version: number;
    fired: { rule: string; site: string }[];
    changes: PropertyChange[];
}

export interface SetPropertyResult {
    state_version: number;
    changes: PropertyChange[];
}

export interface UndoResult {
    state_version: number;
    restored_version: number;
    changes: PropertyChange[];
}

export interface CreatedSession {
    session: string;
    tokens: Record<string, string>;
    state_version: number;
    mode: string;
}

export interface RoleSpec {
    id: string;
    visibility?: string[] | "all";
    permissions?: string[];
}
