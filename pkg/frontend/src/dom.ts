import { ExerciseConsole, ConsoleState } from "./console";
import type { SessionEvent } from "./types";
import type { MapNode } from "./viewmodel";

function el(
    tag: string,
    attrs: Record<string, string> = {},
    children: (Node | string)[] = [],
): HTMLElement {
    const node = document.createElement(tag);
    for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
    for (const child of children) node.append(child);
    return node;
}

function describeValue(value: unknown): string {
    if (value === null) return "unknown";
    return String(value);
}

function nodeCard(node: MapNode): HTMLElement {
    const badges: HTMLElement[] = [];
    if (node.impact) {
        badges.push(el("span", { class: "badge impact" },
            [`${node.impact.category}/${node.impact.severity}`]));
    }
    for (const kind of node.discrepancies) {
        badges.push(el("span", { class: "badge discrepancy" }, [kind]));
    }
    const props = el("dl", {}, Object.entries(node.properties)
        .filter(([name]) => !name.startsWith("discrepancy:"))
        .flatMap(([name, value]) => [
            el("dt", { class: node.changed.includes(name) ? "changed" : "" }, [name]),
            el("dd", {}, [describeValue(value)]),
        ]));
    return el("article", {
        class: node.changed.length ? "node changed" : "node",
        "data-node": node.id,
    }, [
        el("header", {}, [el("strong", {}, [node.name]), " ", ...badges]),
        node.addresses.length
            ? el("p", { class: "addresses" }, [node.addresses.join(", ")])
            : "",
        props,
    ]);
}

function timelineRow(event: SessionEvent): HTMLElement {
    let text: string;
    if (event.redacted) {
        text = `${event.event} (redacted)`;
    } else if (event.event === "fire-rule" && event.binding) {
        text = `fired ${event.binding.rule}`;
    } else if (event.event === "set-property") {
        text = `set ${event.subject}${event.property ? "." + event.property : ""}`;
    } else if (event.event === "annotate") {
        text = `note: ${event.text ?? ""}`;
    } else if (event.event === "undo" || event.event === "restore") {
        text = `undo to version ${event.to_version ?? "?"}`;
    } else {
        text = event.event;
    }
    return el("li", {}, [`#${event.seq} ${event.role}: ${text}`]);
}

/** Rebuild the whole console UI from one state snapshot. */
export function render(
    root: HTMLElement,
    state: ConsoleState,
    console_: ExerciseConsole,
): void {
    root.replaceChildren();

    if (state.banner) {
        root.append(el("div", { class: "banner", role: "alert" }, [state.banner]));
    }
    if (state.toast) {
        root.append(el("div", { class: "toast" }, [state.toast]));
    }

    const picker = el("select", { class: "role-picker" },
        state.roles.map((r) => {
            const opt = el("option", { value: r }, [r]);
            if (r === state.role) opt.setAttribute("selected", "selected");
            return opt;
        }));
    picker.addEventListener("change", () => {
        void console_.switchRole((picker as HTMLSelectElement).value);
    });
    root.append(el("nav", {}, ["role: ", picker]));

    if (!state.map) {
        root.append(el("p", { class: "empty" }, ["loading session..."]));
        return;
    }

    const map = state.map;
    const grouped = new Set(map.groups.flatMap((g) => g.members));
    const bodies = new Map(map.nodes.map((n) => [n.id, nodeCard(n)]));
    const mapSection = el("section", { class: "map" }, [
        el("h2", {}, [`map, version ${map.version}`]),
    ]);
    for (const group of map.groups) {
        const host = bodies.get(group.parent);
        const pen = el("fieldset", { class: "group" }, [
            el("legend", {}, [group.parent]),
            ...(host ? [host] : []),
            ...group.members.map((m) => bodies.get(m)).filter((x): x is HTMLElement => !!x),
        ]);
        mapSection.append(pen);
    }
    for (const node of map.nodes) {
        if (!grouped.has(node.id) && !map.groups.some((g) => g.parent === node.id)) {
            mapSection.append(bodies.get(node.id)!);
        }
    }
    mapSection.append(el("ul", { class: "edges" },
        map.edges.map((e) => el("li", {}, [`${e.a} -- ${e.b} (${e.id})`]))));
    if (Object.keys(map.facts).length) {
        mapSection.append(el("ul", { class: "facts" },
            Object.entries(map.facts).map(([id, v]) =>
                el("li", {}, [`${id} = ${describeValue(v)}`]))));
    }
    const ackButton = el("button", {}, ["clear highlights"]);
    ackButton.addEventListener("click", () => console_.acknowledge());
    mapSection.append(ackButton);
    root.append(mapSection);

    const actionSection = el("section", { class: "actions" }, [
        el("h2", {}, ["actions"]),
    ]);
    if (state.actions && state.actions.bindings.length) {
        for (const entry of state.actions.bindings) {
            const button = el("button", { "data-action": entry.key }, [entry.label]);
            if (entry.disabledReason) {
                button.setAttribute("disabled", "disabled");
                button.setAttribute("title", entry.disabledReason);
            } else {
                button.addEventListener("click", () => void console_.fire(entry.key));
            }
            actionSection.append(button);
            if (entry.disabledReason) {
                actionSection.append(el("small", {}, [entry.disabledReason]));
            }
        }
    } else {
        actionSection.append(el("p", { class: "empty" }, ["nothing enabled"]));
    }
    root.append(actionSection);

    if (state.actions?.undoControl) {
        const input = el("input", {
            type: "number", min: "0", value: String(Math.max(map.version - 1, 0)),
        }) as HTMLInputElement;
        const button = el("button", {}, ["undo to version"]);
        button.addEventListener("click", () => {
            void console_.undo(Number(input.value));
        });
        root.append(el("section", { class: "undo" }, [button, input]));
    }

    if (state.actions?.propertyForm) {
        const subject = el("input", { placeholder: "container or fact:id" }) as HTMLInputElement;
        const property = el("input", { placeholder: "property" }) as HTMLInputElement;
        const value = el("input", { placeholder: "true/false/number/text" }) as HTMLInputElement;
        const button = el("button", {}, ["set"]);
        button.addEventListener("click", () => {
            let parsed: boolean | number | string | null = value.value;
            if (parsed === "true") parsed = true;
            else if (parsed === "false") parsed = false;
            else if (parsed === "null" || parsed === "") parsed = null;
            else if (/^-?\d+$/.test(parsed)) parsed = Number(parsed);
            void console_.setProperty(
                subject.value,
                property.value || null,
                parsed,
            );
        });
        root.append(el("section", { class: "override" }, [
            el("h2", {}, ["facilitator override"]),
            subject, property, value, button,
        ]));
    }

    if (map.facilitator) {
        const picker = el("select", { class: "peek-picker" },
            state.roles.filter((r) => r !== state.role)
                .map((r) => el("option", { value: r }, [r])));
        const button = el("button", {}, ["peek at role"]);
        button.addEventListener("click", () => {
            void console_.peekRole((picker as HTMLSelectElement).value);
        });
        const peek = el("section", { class: "peek" }, [
            el("h2", {}, ["participant view"]), picker, button,
        ]);
        if (state.peek) {
            const clear = el("button", {}, ["close"]);
            clear.addEventListener("click", () => console_.clearPeek());
            peek.append(
                el("h3", {}, [`as ${state.peek.role}`]),
                ...state.peek.map.nodes.map(nodeCard),
                clear,
            );
        }
        root.append(peek);
    }

    root.append(el("section", { class: "timeline" }, [
        el("h2", {}, ["timeline"]),
        el("ol", {}, state.timeline.map(timelineRow)),
    ]));
}
