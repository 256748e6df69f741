import { describe, expect, it } from "vitest";

import type { EnabledActionsResponse, StatusMap } from "../src/types";
import {
    acknowledgeChanges,
    actionKey,
    deriveActions,
    deriveMap,
    siteKey,
} from "../src/viewmodel";

function status(overrides: Partial<StatusMap> = {}): StatusMap {
    return {
        session: "s-1",
        mode: "standard",
        state_version: 1,
        containers: [
            {
                id: "site",
                name: "Site",
                parent: null,
                properties: {},
                addresses: [],
            },
            {
                id: "web",
                name: "Web server",
                parent: "site",
                properties: {
                    compromised: false,
                    "discrepancy:unexpected-open-port": true,
                },
                addresses: ["10.0.1.1"],
                impact: { category: "availability", severity: "medium" },
            },
            {
                id: "db",
                name: "Database",
                parent: "site",
                properties: { reachable: null },
                addresses: [],
            },
        ],
        links: [{ id: "l-web-db", a: "web", b: "db", properties: {} }],
        facts: { maintenance_window: false },
        changes: [],
        ...overrides,
    };
}

describe("deriveMap", () => {
    it("projects containers, links, groups, and facts without inventing ids", () => {
        const body = status({ state_hash: "abc" });
        const vm = deriveMap(body);
        expect(vm.version).toBe(1);
        expect(vm.facilitator).toBe(true);
        expect(vm.nodes.map((n) => n.id)).toEqual(["site", "web", "db"]);
        expect(vm.edges.map((e) => e.id)).toEqual(["l-web-db"]);
        expect(vm.groups).toEqual([{ parent: "site", members: ["db", "web"] }]);
        expect(vm.facts).toEqual({ maintenance_window: false });

        const containerIds = new Set(body.containers.map((c) => c.id));
        for (const node of vm.nodes) expect(containerIds.has(node.id)).toBe(true);
    });

    it("reads badges from impact notes and discrepancy markers", () => {
        const vm = deriveMap(status());
        const web = vm.nodes.find((n) => n.id === "web")!;
        expect(web.impact).toEqual({ category: "availability", severity: "medium" });
        expect(web.discrepancies).toEqual(["unexpected-open-port"]);
        expect(vm.facilitator).toBe(false);
        expect(vm.nodes.find((n) => n.id === "db")!.discrepancies).toEqual([]);
    });

    it("highlights changed properties until acknowledged", () => {
        const first = deriveMap(status());
        const second = deriveMap(
            status({
                state_version: 2,
                changes: [{
                    version: 2,
                    changes: [
                        { subject: "web", property: "compromised", old: false, new: true },
                    ],
                }],
            }),
            first,
        );
        expect(second.nodes.find((n) => n.id === "web")!.changed)
            .toEqual(["compromised"]);

        // carried across a later quiet poll, then cleared on acknowledge
        const third = deriveMap(status({ state_version: 2 }), second);
        expect(third.nodes.find((n) => n.id === "web")!.changed)
            .toEqual(["compromised"]);
        const cleared = acknowledgeChanges(third);
        expect(cleared.nodes.every((n) => n.changed.length === 0)).toBe(true);
        expect(cleared.version).toBe(2);
    });

    it("rejects a response older than the held version", () => {
        const held = deriveMap(status({ state_version: 5 }));
        const vm = deriveMap(status({ state_version: 4 }), held);
        expect(vm).toBe(held);
    });

    it("keeps only containers named by the new response on refresh", () => {
        const full = deriveMap(status());
        const narrow = deriveMap(
            status({
                state_version: 2,
                containers: status().containers.slice(0, 2),
                links: [],
            }),
            full,
        );
        expect(narrow.nodes.map((n) => n.id)).toEqual(["site", "web"]);
        expect(narrow.edges).toEqual([]);
    });
});

describe("action form", () => {
    const enabled: EnabledActionsResponse = {
        state_version: 3,
        actions: [
            {
                binding: {
                    rule: "gain-user-access",
                    site: {
                        type: "link",
                        link: "l-left-router",
                        source: "left-computer",
                        target: "router",
                    },
                },
                rule: "gain-user-access",
                label: "Gain user access (over l-left-router from left-computer to router)",
            },
        ],
    };

    it("offers exactly the bindings the service returned", () => {
        const form = deriveActions(enabled, true);
        expect(form.version).toBe(3);
        expect(form.bindings).toHaveLength(1);
        expect(form.bindings[0].key)
            .toBe("gain-user-access@link:l-left-router:left-computer->router");
        expect(form.propertyForm).toBe(true);
        expect(form.undoControl).toBe(true);

        const participant = deriveActions(enabled, false);
        expect(participant.propertyForm).toBe(false);
        expect(participant.undoControl).toBe(false);
    });

    it("carries denial reasons across refreshes by key", () => {
        const first = deriveActions(enabled, false);
        const denied = {
            ...first,
            bindings: first.bindings.map((b) => ({
                ...b,
                disabledReason: "outside your view",
            })),
        };
        const second = deriveActions(enabled, false, denied);
        expect(second.bindings[0].disabledReason).toBe("outside your view");

        const other = deriveActions({ state_version: 4, actions: [] }, false, denied);
        expect(other.bindings).toEqual([]);
    });

    it("keys every site shape distinctly", () => {
        expect(siteKey({ type: "conventional" })).toBe("conventional");
        expect(siteKey({
            type: "sibling", parent: "p", source: "a", target: "b",
        })).toBe("sibling:p:a~b");
        expect(siteKey({
            type: "parent-child", parent: "p", children: ["c"],
        })).toBe("parent-child:p<-c");
        expect(siteKey({
            type: "multi-child", parent: "p", children: ["c1", "c2"],
        })).toBe("multi-child:p<-c1,c2");
        expect(actionKey({
            binding: { rule: "r", site: { type: "conventional" } },
            rule: "r",
            label: "r",
        })).toBe("r@conventional");
    });
});
