import type {
    EnabledAction,
    EnabledActionsResponse,
    PropertyValue,
    SitePayload,
    StatusMap,
} from "./types";

const DISCREPANCY_PREFIX = "discrepancy:";

export interface MapNode {
    id: string;
    name: string;
    parent: string | null;
    properties: Record<string, PropertyValue>;
    addresses: string[];
    impact: { category: string; severity: string } | null;
    discrepancies: string[];
    // property names changed since the last acknowledged version
    changed: string[];
}

export interface MapEdge {
    id: string;
    a: string;
    b: string;
    properties: Record<string, PropertyValue>;
}

export interface MapGroup {
    parent: string;
    members: string[];
}

export interface MapViewModel {
    version: number;
    facilitator: boolean;
    nodes: MapNode[];
    edges: MapEdge[];
    groups: MapGroup[];
    facts: Record<string, PropertyValue>;
}

/**
 * Project a status response onto the map view model.
 *
 * Every node and edge comes straight from the response; nothing is carried
 * over from `previous` except the changed-property highlights, which
 * accumulate until `acknowledgeChanges` clears them. A response older than
 * the held version is rejected: polls can arrive out of order, and the
 * journal only ever appends (undo is itself a new version), so a lower
 * version is always stale data, never new truth.
 */
export function deriveMap(
    status: StatusMap,
    previous: MapViewModel | null = null,
): MapViewModel {
    if (previous && status.state_version < previous.version) {
        return previous;
    }
    const carried = new Map<string, string[]>();
    if (previous) {
        for (const node of previous.nodes) {
            if (node.changed.length) carried.set(node.id, node.changed);
        }
    }
    const fresh = new Map<string, Set<string>>();
    for (const batch of status.changes) {
        for (const change of batch.changes) {
            let set = fresh.get(change.subject);
            if (!set) fresh.set(change.subject, (set = new Set()));
            set.add(change.property);
        }
    }

    const nodes: MapNode[] = status.containers.map((c) => {
        const discrepancies: string[] = [];
        for (const [name, value] of Object.entries(c.properties)) {
            if (name.startsWith(DISCREPANCY_PREFIX) && value) {
                discrepancies.push(name.slice(DISCREPANCY_PREFIX.length));
            }
        }
        const changed = new Set(carried.get(c.id) ?? []);
        for (const prop of fresh.get(c.id) ?? []) changed.add(prop);
        return {
            id: c.id,
            name: c.name,
            parent: c.parent,
            properties: c.properties,
            addresses: c.addresses,
            impact: c.impact ?? null,
            discrepancies: discrepancies.sort(),
            changed: [...changed].sort(),
        };
    });

    const groups = new Map<string, string[]>();
    for (const node of nodes) {
        if (node.parent === null) continue;
        const members = groups.get(node.parent);
        if (members) members.push(node.id);
        else groups.set(node.parent, [node.id]);
    }

    return {
        version: status.state_version,
        facilitator: status.state_hash !== undefined,
        nodes,
        edges: status.links.map((l) => ({
            id: l.id,
            a: l.a,
            b: l.b,
            properties: l.properties,
        })),
        groups: [...groups.entries()]
            .map(([parent, members]) => ({ parent, members: members.sort() }))
            .sort((x, y) => (x.parent < y.parent ? -1 : 1)),
        facts: status.facts,
    };
}

/** Drop all change highlights, keeping everything else. */
export function acknowledgeChanges(vm: MapViewModel): MapViewModel {
    return { ...vm, nodes: vm.nodes.map((n) => ({ ...n, changed: [] })) };
}

export function siteKey(site: SitePayload): string {
    switch (site.type) {
        case "link":
            return `link:${site.link}:${site.source}->${site.target}`;
        case "sibling":
            return `sibling:${site.parent}:${site.source}~${site.target}`;
        case "conventional":
            return "conventional";
        default:
            return `${site.type}:${site.parent}<-${site.children.join(",")}`;
    }
}

export function actionKey(action: EnabledAction): string {
    return `${action.binding.rule}@${siteKey(action.binding.site)}`;
}

export interface ActionEntry {
    key: string;
    rule: string;
    label: string;
    action: EnabledAction;
    // set after a denied attempt so the control renders disabled with a reason
    disabledReason: string | null;
}

export interface ActionFormModel {
    version: number;
    bindings: ActionEntry[];
    // facilitator-only controls
    propertyForm: boolean;
    undoControl: boolean;
}

/**
 * Fire controls exist only for bindings the service reported enabled for
 * this role. Denial reasons from earlier attempts are carried over by key.
 */
export function deriveActions(
    response: EnabledActionsResponse,
    facilitator: boolean,
    previous: ActionFormModel | null = null,
): ActionFormModel {
    const reasons = new Map<string, string>();
    if (previous) {
        for (const entry of previous.bindings) {
            if (entry.disabledReason) reasons.set(entry.key, entry.disabledReason);
        }
    }
    return {
        version: response.state_version,
        bindings: response.actions.map((action) => {
            const key = actionKey(action);
            return {
                key,
                rule: action.rule,
                label: action.label,
                action,
                disabledReason: reasons.get(key) ?? null,
            };
        }),
        propertyForm: facilitator,
        undoControl: facilitator,
    };
}
