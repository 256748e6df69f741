"""War-game session service: multi-role exercises over a shared live model.

Sessions are event-sourced into JSONL journals so a restarted server picks
them up exactly where they stopped.  Undo never rewrites history; it appends
a restore event and replays the effective prefix.
"""
from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .engine import (
    Binding,
    Trajectory,
    automatic_closure,
    binding_from_payload,
    enabled_bindings,
    fire_rule,
)
from .errors import (
    ClosureBudgetExceeded,
    InvalidSequence,
    ModelValidationError,
    ParseError,
    RuleNotEnabled,
    SchemaError,
    UnknownSubject,
)
from .ingest import model_document, parse_model_document
from .model import (
    ABSENT,
    Model,
    ModelIndex,
    PropertyValue,
    UNKNOWN,
    value_kind,
)
from .search import bound_containers
from .state import (
    BoundAssignment,
    Symptom,
    WorldState,
    apply_assignments,
    diff_states,
    initial_state,
    state_hash,
    symptom_payload,
)

PERMISSIONS = ("fire-rule", "set-property", "annotate", "undo")


class _ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _bad(message: str) -> _ApiError:
    return _ApiError(400, "invalid", message)


@dataclass(frozen=True)
class Role:
    id: str
    visibility: str | tuple[str, ...]  # "all" or container ids
    permissions: frozenset[str]

    def sees_all(self) -> bool:
        return self.visibility == "all"

    def visible_set(self) -> set[str] | None:
        return None if self.sees_all() else set(self.visibility)

    def payload(self) -> dict:
        return {
            "id": self.id,
            "visibility": "all" if self.sees_all() else sorted(self.visibility),
            "permissions": sorted(self.permissions),
        }


def _parse_roles(data, index: ModelIndex) -> list[Role]:
    if not isinstance(data, list) or not data:
        raise _bad("at least one role is required")
    roles: list[Role] = []
    seen: set[str] = set()
    for raw in data:
        if not isinstance(raw, dict) or not isinstance(raw.get("id"), str):
            raise _bad("each role needs a string id")
        rid = raw["id"]
        if rid in seen:
            raise _bad(f"duplicate role id {rid!r}")
        seen.add(rid)
        visibility = raw.get("visibility", "all")
        if visibility != "all":
            if not isinstance(visibility, list) or not all(
                isinstance(v, str) for v in visibility
            ):
                raise _bad(f"role {rid!r}: visibility must be \"all\" or a container list")
            for cid in visibility:
                if cid not in index.containers:
                    raise _bad(f"role {rid!r}: no container {cid!r} in the model")
            visibility = tuple(sorted(set(visibility)))
        perms = raw.get("permissions")
        if perms is None:
            perms = list(PERMISSIONS)
        if not isinstance(perms, list) or any(p not in PERMISSIONS for p in perms):
            raise _bad(f"role {rid!r}: permissions must be drawn from {PERMISSIONS}")
        roles.append(Role(rid, visibility, frozenset(perms)))
    return roles


def _roles_from_header(data: list[dict]) -> list[Role]:
    return [
        Role(
            r["id"],
            "all" if r["visibility"] == "all" else tuple(r["visibility"]),
            frozenset(r["permissions"]),
        )
        for r in data
    ]


def _property_kinds(model: Model) -> tuple[dict[str, str], dict[str, str]]:
    """Declared kind per property name, and per fact id."""
    kinds: dict[str, str] = {}

    def note(name: str, value: PropertyValue) -> None:
        if value is UNKNOWN or value is ABSENT:
            return
        kinds.setdefault(name, value_kind(value))

    for c in model.containers:
        for name, value in c.properties.items():
            note(name, value)
    for link in model.links:
        for name, value in link.properties.items():
            note(name, value)
    for rule in list(model.generic_rules) + list(model.conventional_rules):
        for atom in list(rule.pre) + list(getattr(rule, "parent_filter", None) or ()):
            if atom.property is not None and atom.value is not None:
                note(atom.property, atom.value)
        for a in rule.post:
            if a.property is not None:
                note(a.property, a.value)
    fact_kinds = {f.id: value_kind(f.value) for f in model.conventional_facts}
    return kinds, fact_kinds


@dataclass(frozen=True)
class _Version:
    number: int
    state: WorldState
    fired: frozenset[tuple[str, str]]
    changes: tuple[Symptom, ...]  # against the previous version


class _Session:
    """One live exercise: model, roles, versioned state, journal."""

    def __init__(self, sid: str, model: Model, roles: list[Role],
                 tokens: dict[str, str], mode: str, journal: Path):
        self.id = sid
        self.model = model
        self.index = ModelIndex(model)
        self.roles = {r.id: r for r in roles}
        self.role_order = [r.id for r in roles]
        self.tokens = tokens  # token -> role id
        self.mode = mode
        self.journal = journal
        self.lock = threading.Lock()
        self.events: list[dict] = []
        self.kinds, self.fact_kinds = _property_kinds(model)
        raw = initial_state(model, validated=True)
        trajectory = Trajectory(state_hash(raw))
        closed, _ = automatic_closure(self.index, raw, trajectory)
        self.versions: list[_Version] = [
            _Version(1, closed, trajectory.fired_snapshot(),
                     tuple(diff_states(raw, closed)))
        ]

    @property
    def current(self) -> _Version:
        return self.versions[-1]

    # -- mutations (no auth here; routes check permissions first) --

    def do_fire(self, binding: Binding) -> tuple[list[tuple[str, str]], _Version]:
        cur = self.current
        trajectory = Trajectory(state_hash(cur.state), cur.fired)
        state, firing = fire_rule(self.index, cur.state, trajectory, binding)
        state, extra = automatic_closure(self.index, state, trajectory)
        version = _Version(
            cur.number + 1, state, trajectory.fired_snapshot(),
            tuple(diff_states(cur.state, state)),
        )
        self.versions.append(version)
        return [firing.key()] + [f.key() for f in extra], version

    def do_set(self, subject: str, prop: str | None, value: PropertyValue) -> _Version:
        cur = self.current
        if subject.startswith("fact:"):
            fid = subject[5:]
            if fid not in self.fact_kinds:
                raise UnknownSubject(f"no fact {fid!r} in this model")
            if prop is not None:
                raise InvalidSequence("facts do not take a property name")
            if value is not UNKNOWN and value_kind(value) != self.fact_kinds[fid]:
                raise InvalidSequence(
                    f"fact {fid!r} holds a {self.fact_kinds[fid]}, not this value"
                )
        else:
            if subject not in self.index.containers:
                raise UnknownSubject(f"no container {subject!r} in this model")
            if not prop:
                raise InvalidSequence("container updates need a property name")
            declared = self.kinds.get(prop)
            if (
                value is not UNKNOWN
                and declared is not None
                and value_kind(value) != declared
            ):
                raise InvalidSequence(f"property {prop!r} holds a {declared}, not this value")
        state = apply_assignments(cur.state, [BoundAssignment(subject, prop, value)])
        version = _Version(
            cur.number + 1, state, cur.fired, tuple(diff_states(cur.state, state))
        )
        self.versions.append(version)
        return version

    def do_undo(self, to_version: int | None) -> tuple[int, _Version]:
        cur = self.current
        target = cur.number - 1 if to_version is None else to_version
        if target < 1 or target >= cur.number:
            raise InvalidSequence(
                f"cannot restore version {target} from version {cur.number}"
            )
        restored = self.versions[target - 1]
        version = _Version(
            cur.number + 1, restored.state, restored.fired,
            tuple(diff_states(cur.state, restored.state)),
        )
        self.versions.append(version)
        return target, version

    # -- journal --

    def append_event(self, event: dict) -> dict:
        event = dict(event)
        event["seq"] = len(self.events) + 1
        self.events.append(event)
        with self.journal.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
        return event

    def restore_event(self, event: dict) -> None:
        kind = event["event"]
        if kind == "fire-rule":
            self.do_fire(binding_from_payload(event["binding"]))
        elif kind == "set-property":
            value = event["value"]
            self.do_set(
                event["subject"], event.get("property"),
                UNKNOWN if value is None else value,
            )
        elif kind == "undo":
            self.do_undo(event["to_version"])
        elif kind != "annotate":
            raise ValueError(f"unknown journal event {kind!r}")
        self.events.append(event)


def _new_session(store: Path, document: dict, roles: list[Role], mode: str) -> _Session:
    model = parse_model_document(document)
    sid = secrets.token_hex(8)
    tokens = {secrets.token_hex(16): role.id for role in roles}
    journal = store / f"{sid}.jsonl"
    session = _Session(sid, model, roles, tokens, mode, journal)
    header = {
        "type": "header",
        "session": sid,
        "document": model_document(model),
        "roles": [r.payload() for r in roles],
        "tokens": tokens,
        "mode": mode,
    }
    with journal.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.flush()
    return session


def _load_session(path: Path) -> _Session:
    with path.open("r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty journal")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError(f"{path}: journal does not start with a header")
    model = parse_model_document(header["document"])
    roles = _roles_from_header(header["roles"])
    session = _Session(
        header["session"], model, roles, header["tokens"],
        header.get("mode", "standard"), path,
    )
    for line in lines[1:]:
        session.restore_event(json.loads(line))
    return session


# --- presentation helpers ------------------------------------------------------


def _encode(value: PropertyValue):
    return None if value is UNKNOWN else value


def _visible_changes(changes: tuple[Symptom, ...], visible: set[str] | None) -> list[dict]:
    out = []
    for symptom in changes:
        if (
            visible is None
            or symptom.subject.startswith("fact:")
            or symptom.subject in visible
        ):
            out.append(symptom_payload(symptom))
    return out


def _describe_site(site) -> str:
    key = site.key()
    if key == "conventional":
        return "global"
    if hasattr(site, "link"):
        return f"over {site.link} from {site.source} to {site.target}"
    if hasattr(site, "source"):
        return f"inside {site.parent} from {site.source} to {site.target}"
    if hasattr(site, "child"):
        return f"from {site.parent} into {site.child}"
    return f"across the children of {site.parent}"


def _status_payload(session: _Session, role: Role, since: int) -> dict:
    visible = role.visible_set()
    cur = session.current
    containers = []
    for c in session.model.containers:
        if visible is not None and c.id not in visible:
            continue
        parent = c.parent if (visible is None or c.parent in visible) else None
        props = {
            name: _encode(value)
            for name, value in sorted(cur.state.container_properties[c.id].items())
        }
        entry: dict = {
            "id": c.id,
            "name": c.name,
            "parent": parent,
            "properties": props,
            "addresses": list(c.addresses),
        }
        if c.impact is not None:
            entry["impact"] = {"category": c.impact.category,
                               "severity": c.impact.severity}
        containers.append(entry)
    links = []
    for link in session.model.links:
        if visible is None or (link.a in visible and link.b in visible):
            links.append({
                "id": link.id, "a": link.a, "b": link.b,
                "properties": {k: _encode(v) for k, v in sorted(link.properties.items())},
            })
    changes = [
        {"version": v.number, "changes": _visible_changes(v.changes, visible)}
        for v in session.versions
        if v.number > since
    ]
    payload = {
        "session": session.id,
        "mode": session.mode,
        "state_version": cur.number,
        "containers": containers,
        "links": links,
        "facts": {fid: _encode(v) for fid, v in sorted(cur.state.facts.items())},
        "changes": changes,
    }
    if visible is None:
        payload["state_hash"] = state_hash(cur.state)
    return payload


def _event_subjects(session: _Session, event: dict) -> set[str]:
    kind = event["event"]
    if kind == "fire-rule":
        try:
            return bound_containers(session.index, binding_from_payload(event["binding"]))
        except Exception:
            return set(session.index.containers)  # unparseable: treat as naming everything
    if kind == "set-property" and not event["subject"].startswith("fact:"):
        return {event["subject"]}
    if kind == "annotate" and event.get("subject"):
        subject = event["subject"]
        return set() if subject.startswith("fact:") else {subject}
    return set()


def _event_view(session: _Session, role: Role, event: dict) -> dict:
    visible = role.visible_set()
    if visible is None or _event_subjects(session, event) <= visible:
        return dict(event)
    return {
        "seq": event["seq"],
        "event": event["event"],
        "role": event["role"],
        "redacted": True,
    }


# --- application ----------------------------------------------------------------


def create_app(storage_dir: str) -> FastAPI:
    """Build the session service; existing journals under storage_dir are reloaded."""
    app = FastAPI(title="sandtable sessions")
    store = Path(storage_dir)
    store.mkdir(parents=True, exist_ok=True)
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()
    for path in sorted(store.glob("*.jsonl")):
        session = _load_session(path)
        sessions[session.id] = session

    @app.exception_handler(_ApiError)
    async def _api_error(_request: Request, exc: _ApiError) -> JSONResponse:
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    def get_session(sid: str) -> _Session:
        session = sessions.get(sid)
        if session is None:
            raise _ApiError(404, "not-found", f"no session {sid!r}")
        return session

    def authorize(session: _Session, request: Request) -> Role:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise _ApiError(401, "unauthorized", "a bearer token is required")
        rid = session.tokens.get(header[7:].strip())
        if rid is None:
            raise _ApiError(401, "unauthorized", "unrecognized token")
        asked = request.query_params.get("role")
        if asked is not None and asked != rid:
            raise _ApiError(401, "unauthorized", "token does not belong to that role")
        return session.roles[rid]

    def require(role: Role, permission: str) -> None:
        if permission not in role.permissions:
            raise _ApiError(403, "forbidden",
                            f"role {role.id!r} lacks the {permission!r} permission")

    async def read_body(request: Request) -> dict:
        raw = await request.body()
        if not raw:
            return {}
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise _bad(f"request body is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise _bad("request body must be a JSON object")
        return data

    @app.post("/sessions")
    async def create_session(request: Request) -> JSONResponse:
        body = await read_body(request)
        document = body.get("model")
        if not isinstance(document, dict):
            raise _bad("a model document is required under \"model\"")
        try:
            model = parse_model_document(document)
        except (ParseError, SchemaError, ModelValidationError) as exc:
            raise _bad(str(exc)) from exc
        mode = body.get("mode", "standard")
        if not isinstance(mode, str):
            raise _bad("mode must be a string")
        roles = _parse_roles(body.get("roles"), ModelIndex(model))
        try:
            with registry_lock:
                session = _new_session(store, model_document(model), roles, mode)
                sessions[session.id] = session
        except ClosureBudgetExceeded as exc:
            raise _bad(f"the model's automatic rules never settle: {exc}") from exc
        return JSONResponse(status_code=201, content={
            "session": session.id,
            "tokens": {rid: tok for tok, rid in session.tokens.items()},
            "state_version": session.current.number,
            "mode": session.mode,
        })

    @app.get("/sessions/{sid}/status")
    async def status(sid: str, request: Request, since: int = 0) -> dict:
        session = get_session(sid)
        role = authorize(session, request)
        with session.lock:
            return _status_payload(session, role, since)

    @app.get("/sessions/{sid}/actions/enabled")
    async def enabled(sid: str, request: Request) -> dict:
        session = get_session(sid)
        role = authorize(session, request)
        visible = role.visible_set()
        with session.lock:
            cur = session.current
            trajectory = Trajectory(state_hash(cur.state), cur.fired)
            actions = []
            for binding in enabled_bindings(session.index, cur.state, trajectory,
                                            mode="triggered"):
                if visible is not None:
                    if not bound_containers(session.index, binding) <= visible:
                        continue
                rule = session.index.rule(binding.rule_id)
                label = getattr(rule, "name", "") or binding.rule_id
                actions.append({
                    "binding": binding.payload(),
                    "rule": binding.rule_id,
                    "label": f"{label} ({_describe_site(binding.site)})",
                })
            return {"state_version": cur.number, "actions": actions}

    @app.post("/sessions/{sid}/actions")
    async def act(sid: str, request: Request) -> dict:
        session = get_session(sid)
        role = authorize(session, request)
        body = await read_body(request)
        action = body.get("action")
        visible = role.visible_set()

        if action == "fire-rule":
            require(role, "fire-rule")
            try:
                binding = binding_from_payload(body["binding"])
            except (KeyError, TypeError) as exc:
                raise _bad(f"malformed binding: {exc}") from exc
            with session.lock:
                if visible is not None:
                    touched = bound_containers(session.index, binding)
                    if not touched <= visible:
                        raise _ApiError(
                            403, "forbidden",
                            "this firing touches containers outside your view",
                        )
                try:
                    fired, version = session.do_fire(binding)
                except RuleNotEnabled as exc:
                    raise _ApiError(409, "conflict", str(exc)) from exc
                except ClosureBudgetExceeded as exc:
                    raise _bad(str(exc)) from exc
                session.append_event({
                    "event": "fire-rule", "role": role.id,
                    "binding": binding.payload(), "version": version.number,
                })
                return {
                    "state_version": version.number,
                    "fired": [{"rule": r, "site": s} for r, s in fired],
                    "changes": _visible_changes(version.changes, visible),
                }

        if action == "set-property":
            require(role, "set-property")
            if "subject" not in body:
                raise _bad("set-property needs a subject")
            subject = body["subject"]
            prop = body.get("property")
            value = body.get("value")
            if value is not None and not isinstance(value, (bool, int, str)):
                raise _bad("value must be a boolean, integer, string, or null")
            if visible is not None and not subject.startswith("fact:"):
                if subject not in visible:
                    raise _ApiError(403, "forbidden",
                                    "that container is outside your view")
            with session.lock:
                try:
                    version = session.do_set(
                        subject, prop, UNKNOWN if value is None else value
                    )
                except (UnknownSubject, InvalidSequence) as exc:
                    raise _bad(str(exc)) from exc
                session.append_event({
                    "event": "set-property", "role": role.id, "subject": subject,
                    "property": prop, "value": value, "version": version.number,
                })
                return {
                    "state_version": version.number,
                    "changes": _visible_changes(version.changes, visible),
                }

        if action == "annotate":
            require(role, "annotate")
            text = body.get("text")
            if not isinstance(text, str) or not text:
                raise _bad("annotate needs non-empty text")
            subject = body.get("subject")
            if subject is not None:
                if not isinstance(subject, str):
                    raise _bad("annotation subject must be a string")
                if not subject.startswith("fact:") and subject not in session.index.containers:
                    raise _bad(f"no container {subject!r} in this model")
                if (
                    visible is not None
                    and not subject.startswith("fact:")
                    and subject not in visible
                ):
                    raise _ApiError(403, "forbidden",
                                    "that container is outside your view")
            with session.lock:
                event = session.append_event({
                    "event": "annotate", "role": role.id,
                    "text": text, "subject": subject,
                })
                return {"seq": event["seq"]}

        raise _bad("action must be fire-rule, set-property, or annotate")

    @app.post("/sessions/{sid}/undo")
    async def undo(sid: str, request: Request) -> dict:
        session = get_session(sid)
        role = authorize(session, request)
        require(role, "undo")
        body = await read_body(request)
        to_version = body.get("to_version")
        if to_version is not None and not isinstance(to_version, int):
            raise _bad("to_version must be an integer")
        with session.lock:
            try:
                target, version = session.do_undo(to_version)
            except InvalidSequence as exc:
                raise _bad(str(exc)) from exc
            session.append_event({
                "event": "undo", "role": role.id,
                "to_version": target, "version": version.number,
            })
            return {
                "state_version": version.number,
                "restored_version": target,
                "changes": _visible_changes(version.changes, role.visible_set()),
            }

    @app.get("/sessions/{sid}/events")
    async def events(sid: str, request: Request, since: int = 0) -> dict:
        session = get_session(sid)
        role = authorize(session, request)
        with session.lock:
            view = [
                _event_view(session, role, event)
                for event in session.events
                if event["seq"] > since
            ]
            return {"events": view, "state_version": session.current.number}

    return app
