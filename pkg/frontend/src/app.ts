import { ServiceClient } from "./api";
import { ExerciseConsole } from "./console";
import { render } from "./dom";

// Configuration arrives as URL parameters
//   ?base=http://host:port&session=ID&role=blue&token=blue:TOKEN&token=director:TOKEN
// or through the login form when anything is missing.

interface Config {
    base: string;
    session: string;
    role: string;
    tokens: Record<string, string>;
}

function fromQuery(): Config | null {
    const params = new URLSearchParams(window.location.search);
    const base = params.get("base");
    const session = params.get("session");
    const tokens: Record<string, string> = {};
    for (const pair of params.getAll("token")) {
        const at = pair.indexOf(":");
        if (at > 0) tokens[pair.slice(0, at)] = pair.slice(at + 1);
    }
    const role = params.get("role") ?? Object.keys(tokens)[0];
    if (!base || !session || !role || !(role in tokens)) return null;
    return { base, session, role, tokens };
}

function loginForm(root: HTMLElement, go: (config: Config) => void): void {
    root.replaceChildren();
    const base = document.createElement("input");
    base.placeholder = "service base URL";
    base.value = window.location.origin;
    const session = document.createElement("input");
    session.placeholder = "session id";
    const role = document.createElement("input");
    role.placeholder = "role id";
    const token = document.createElement("input");
    token.placeholder = "role token";
    const button = document.createElement("button");
    button.textContent = "join";
    button.addEventListener("click", () => {
        if (!base.value || !session.value || !role.value || !token.value) return;
        go({
            base: base.value,
            session: session.value,
            role: role.value,
            tokens: { [role.value]: token.value },
        });
    });
    const form = document.createElement("section");
    form.className = "login";
    form.append(base, session, role, token, button);
    root.append(form);
}

function boot(root: HTMLElement, config: Config): void {
    const console_ = new ExerciseConsole({
        client: new ServiceClient(config.base),
        session: config.session,
        tokens: config.tokens,
        role: config.role,
    });
    console_.subscribe((state) => render(root, state, console_));
    void console_.start();
}

const root = document.getElementById("console");
if (root) {
    const config = fromQuery();
    if (config) boot(root, config);
    else loginForm(root, (made) => boot(root, made));
}
