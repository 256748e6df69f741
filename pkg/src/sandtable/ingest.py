"""Model documents, scan observations, and model-vs-scan reconciliation.

The JSON document layout here is the package's external exchange format:
canonical serialization sorts entity lists by id and object keys
alphabetically, so equal models produce byte-identical documents.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ModelValidationError, ParseError, SchemaError, StaleDiscrepancies
from .model import (
    RESERVED_CLOSED_WORLD,
    RESERVED_FORWARDS,
    RESERVED_MARKER_PREFIX,
    RESERVED_OPEN_PORTS,
    RESERVED_SERVICES,
    Assignment,
    ConditionAtom,
    Container,
    ConventionalFact,
    ConventionalRule,
    GenericRule,
    Goal,
    Impact,
    Link,
    Model,
    ModelIndex,
    PROVENANCES,
    PropertyValue,
    RULE_KINDS,
    RULE_MODES,
    RULE_SCOPES,
    UNKNOWN,
    match_forward,
    parse_forwards,
    parse_open_ports,
    parse_services,
    sha256_hex,
    validate_model,
)

SCHEMA_VERSION = 1


# --- scalar helpers ----------------------------------------------------------


def _decode_scalar(raw, path: str) -> PropertyValue:
    if raw is None:
        return UNKNOWN
    if isinstance(raw, bool) or isinstance(raw, str):
        return raw
    if isinstance(raw, int):
        return raw
    if isinstance(raw, float):
        raise SchemaError(path, "floating-point values are not part of the value domain")
    raise SchemaError(path, f"expected a scalar value, got {type(raw).__name__}")


def _encode_scalar(value: PropertyValue):
    return None if value is UNKNOWN else value


def _expect(data, path: str, typ, label: str):
    if not isinstance(data, typ) or (typ is int and isinstance(data, bool)):
        raise SchemaError(path, f"expected {label}")
    return data


def _expect_keys(data: dict, path: str, required: tuple[str, ...],
                 optional: tuple[str, ...]) -> None:
    for key in required:
        if key not in data:
            raise SchemaError(path, f"required key {key!r} is missing")
    for key in data:
        if key not in required and key not in optional:
            raise SchemaError(f"{path}.{key}", "unknown key")


# --- atoms and assignments -----------------------------------------------------

_PREDICATE_KEYS = ("equals", "not_equals", "present", "absent")


def _parse_atom(data, path: str) -> ConditionAtom:
    _expect(data, path, dict, "an object")
    _expect_keys(data, path, ("subject",), ("property",) + _PREDICATE_KEYS)
    subject = _expect(data["subject"], f"{path}.subject", str, "a string")
    given = [k for k in _PREDICATE_KEYS if k in data]
    if len(given) != 1:
        raise SchemaError(path, "atoms carry exactly one of equals/not_equals/present/absent")
    key = given[0]
    prop = data.get("property")
    if prop is not None:
        _expect(prop, f"{path}.property", str, "a string")
    if key in ("present", "absent"):
        if data[key] is not True:
            raise SchemaError(f"{path}.{key}", "must be true")
        return ConditionAtom(subject, key, prop)
    value = _decode_scalar(data[key], f"{path}.{key}")
    predicate = "equals" if key == "equals" else "not-equals"
    return ConditionAtom(subject, predicate, prop, value)


def _atom_payload(atom: ConditionAtom) -> dict:
    out: dict = {"subject": atom.subject}
    if atom.property is not None:
        out["property"] = atom.property
    if atom.predicate == "equals":
        out["equals"] = _encode_scalar(atom.value)
    elif atom.predicate == "not-equals":
        out["not_equals"] = _encode_scalar(atom.value)
    else:
        out[atom.predicate] = True
    return out


def _parse_assignment(data, path: str) -> Assignment:
    _expect(data, path, dict, "an object")
    _expect_keys(data, path, ("subject", "value"), ("property",))
    subject = _expect(data["subject"], f"{path}.subject", str, "a string")
    prop = data.get("property")
    if prop is not None:
        _expect(prop, f"{path}.property", str, "a string")
    value = _decode_scalar(data["value"], f"{path}.value")
    return Assignment(subject, prop, value)


def _assignment_payload(a: Assignment) -> dict:
    out: dict = {"subject": a.subject, "value": _encode_scalar(a.value)}
    if a.property is not None:
        out["property"] = a.property
    return out


# --- document parsing -----------------------------------------------------------


def parse_model_document(data: bytes | str | dict, *, validate: bool = True) -> Model:
    """Parse (and by default validate) a model document.

    Raises ParseError with a line/column location for malformed JSON,
    SchemaError with a path for layout problems, and ModelValidationError
    when the parsed model fails validation.
    """
    if isinstance(data, (bytes, str)):
        if isinstance(data, bytes):
            data = data.decode("utf-8", errors="replace")
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) from exc
    else:
        doc = data
    _expect(doc, "$", dict, "an object")
    _expect_keys(
        doc, "$", ("containers",),
        ("model", "links", "generic_rules", "facts", "conventional_rules", "goals"),
    )

    header = doc.get("model", {})
    _expect(header, "model", dict, "an object")
    _expect_keys(header, "model", (), ("name", "provenance", "severity_scale", "version"))
    version = header.get("version", SCHEMA_VERSION)
    if version not in (SCHEMA_VERSION, str(SCHEMA_VERSION)):
        raise SchemaError("model.version", f"unsupported document version {version!r}")
    name = _expect(header.get("name", "unnamed"), "model.name", str, "a string")
    provenance = _expect(
        header.get("provenance", "operational"), "model.provenance", str, "a string"
    )
    if provenance not in PROVENANCES:
        raise SchemaError("model.provenance", f"unknown provenance {provenance!r}")
    scale_raw = _expect(
        header.get("severity_scale", []), "model.severity_scale", list, "a list"
    )
    scale = tuple(
        _expect(s, f"model.severity_scale[{i}]", str, "a string")
        for i, s in enumerate(scale_raw)
    )

    containers = []
    for i, raw in enumerate(_expect(doc["containers"], "containers", list, "a list")):
        path = f"containers[{i}]"
        _expect(raw, path, dict, "an object")
        _expect_keys(raw, path, ("id",), ("name", "parent", "properties", "impact", "addresses"))
        cid = _expect(raw["id"], f"{path}.id", str, "a string")
        cname = _expect(raw.get("name", cid), f"{path}.name", str, "a string")
        parent = raw.get("parent")
        if parent is not None:
            _expect(parent, f"{path}.parent", str, "a string")
        props_raw = _expect(raw.get("properties", {}), f"{path}.properties", dict, "an object")
        props = {
            k: _decode_scalar(v, f"{path}.properties.{k}") for k, v in props_raw.items()
        }
        impact = None
        if raw.get("impact") is not None:
            ipath = f"{path}.impact"
            _expect(raw["impact"], ipath, dict, "an object")
            _expect_keys(raw["impact"], ipath, ("category", "severity"), ())
            impact = Impact(
                _expect(raw["impact"]["category"], f"{ipath}.category", str, "a string"),
                _expect(raw["impact"]["severity"], f"{ipath}.severity", str, "a string"),
            )
        addrs_raw = _expect(raw.get("addresses", []), f"{path}.addresses", list, "a list")
        addresses = tuple(
            _expect(a, f"{path}.addresses[{j}]", str, "a string")
            for j, a in enumerate(addrs_raw)
        )
        containers.append(Container(cid, cname, parent, props, impact, addresses))

    links = []
    for i, raw in enumerate(_expect(doc.get("links", []), "links", list, "a list")):
        path = f"links[{i}]"
        _expect(raw, path, dict, "an object")
        _expect_keys(raw, path, ("id", "a", "b"), ("properties",))
        props_raw = _expect(raw.get("properties", {}), f"{path}.properties", dict, "an object")
        links.append(Link(
            _expect(raw["id"], f"{path}.id", str, "a string"),
            _expect(raw["a"], f"{path}.a", str, "a string"),
            _expect(raw["b"], f"{path}.b", str, "a string"),
            {k: _decode_scalar(v, f"{path}.properties.{k}") for k, v in props_raw.items()},
        ))

    generic_rules = []
    for i, raw in enumerate(
        _expect(doc.get("generic_rules", []), "generic_rules", list, "a list")
    ):
        path = f"generic_rules[{i}]"
        _expect(raw, path, dict, "an object")
        _expect_keys(
            raw, path, ("id", "name", "scope", "pre", "post"),
            ("kind", "mode", "repeatable", "direction", "parent_filter"),
        )
        rid = _expect(raw["id"], f"{path}.id", str, "a string")
        scope = _expect(raw["scope"], f"{path}.scope", str, "a string")
        if scope not in RULE_SCOPES:
            raise SchemaError(f"{path}.scope", f"unknown scope {scope!r}")
        kind = _expect(raw.get("kind", "attack"), f"{path}.kind", str, "a string")
        if kind not in RULE_KINDS:
            raise SchemaError(f"{path}.kind", f"unknown kind {kind!r}")
        mode = _expect(raw.get("mode", "triggered"), f"{path}.mode", str, "a string")
        if mode not in RULE_MODES:
            raise SchemaError(f"{path}.mode", f"unknown mode {mode!r}")
        direction = raw.get("direction")
        if direction is None and scope == "link":
            direction = "directed"
        if direction is not None:
            _expect(direction, f"{path}.direction", str, "a string")
        parent_filter = None
        if raw.get("parent_filter") is not None:
            pf_raw = _expect(raw["parent_filter"], f"{path}.parent_filter", list, "a list")
            parent_filter = tuple(
                _parse_atom(a, f"{path}.parent_filter[{j}]") for j, a in enumerate(pf_raw)
            )
        pre_raw = _expect(raw["pre"], f"{path}.pre", list, "a list")
        post_raw = _expect(raw["post"], f"{path}.post", list, "a list")
        generic_rules.append(GenericRule(
            id=rid,
            name=_expect(raw["name"], f"{path}.name", str, "a string"),
            kind=kind,
            scope=scope,
            pre=tuple(_parse_atom(a, f"{path}.pre[{j}]") for j, a in enumerate(pre_raw)),
            post=tuple(
                _parse_assignment(a, f"{path}.post[{j}]") for j, a in enumerate(post_raw)
            ),
            mode=mode,
            repeatable=bool(_expect(
                raw.get("repeatable", False), f"{path}.repeatable", bool, "a boolean"
            )),
            direction=direction,
            parent_filter=parent_filter,
        ))

    facts = []
    for i, raw in enumerate(_expect(doc.get("facts", []), "facts", list, "a list")):
        path = f"facts[{i}]"
        _expect(raw, path, dict, "an object")
        _expect_keys(raw, path, ("id", "value"), ())
        facts.append(ConventionalFact(
            _expect(raw["id"], f"{path}.id", str, "a string"),
            _decode_scalar(raw["value"], f"{path}.value"),
        ))

    conventional_rules = []
    for i, raw in enumerate(
        _expect(doc.get("conventional_rules", []), "conventional_rules", list, "a list")
    ):
        path = f"conventional_rules[{i}]"
        _expect(raw, path, dict, "an object")
        _expect_keys(raw, path, ("id", "pre", "post"), ("mode", "repeatable"))
        mode = _expect(raw.get("mode", "triggered"), f"{path}.mode", str, "a string")
        if mode not in RULE_MODES:
            raise SchemaError(f"{path}.mode", f"unknown mode {mode!r}")
        pre_raw = _expect(raw["pre"], f"{path}.pre", list, "a list")
        post_raw = _expect(raw["post"], f"{path}.post", list, "a list")
        conventional_rules.append(ConventionalRule(
            id=_expect(raw["id"], f"{path}.id", str, "a string"),
            pre=tuple(_parse_atom(a, f"{path}.pre[{j}]") for j, a in enumerate(pre_raw)),
            post=tuple(
                _parse_assignment(a, f"{path}.post[{j}]") for j, a in enumerate(post_raw)
            ),
            mode=mode,
            repeatable=bool(_expect(
                raw.get("repeatable", False), f"{path}.repeatable", bool, "a boolean"
            )),
        ))

    goals = []
    for i, raw in enumerate(_expect(doc.get("goals", []), "goals", list, "a list")):
        path = f"goals[{i}]"
        _expect(raw, path, dict, "an object")
        _expect_keys(raw, path, ("id", "conditions"), ())
        cond_raw = _expect(raw["conditions"], f"{path}.conditions", list, "a list")
        goals.append(Goal(
            _expect(raw["id"], f"{path}.id", str, "a string"),
            tuple(_parse_atom(a, f"{path}.conditions[{j}]") for j, a in enumerate(cond_raw)),
        ))

    model = Model(
        name=name,
        provenance=provenance,
        severity_scale=scale,
        containers=tuple(containers),
        links=tuple(links),
        generic_rules=tuple(generic_rules),
        conventional_facts=tuple(facts),
        conventional_rules=tuple(conventional_rules),
        goals=tuple(goals),
    )
    if validate:
        violations = validate_model(model)
        if violations:
            raise ModelValidationError(violations)
    return model


# --- document serialization -------------------------------------------------------


def model_document(model: Model) -> dict:
    """The canonical document dict (entity lists sorted by id)."""
    doc: dict = {
        "model": {
            "name": model.name,
            "provenance": model.provenance,
            "severity_scale": list(model.severity_scale),
            "version": SCHEMA_VERSION,
        },
        "containers": [],
    }
    for c in sorted(model.containers, key=lambda c: c.id):
        entry: dict = {"id": c.id, "name": c.name}
        if c.parent is not None:
            entry["parent"] = c.parent
        if c.properties:
            entry["properties"] = {k: _encode_scalar(v) for k, v in sorted(c.properties.items())}
        if c.impact is not None:
            entry["impact"] = {"category": c.impact.category, "severity": c.impact.severity}
        if c.addresses:
            entry["addresses"] = sorted(c.addresses)
        doc["containers"].append(entry)
    if model.links:
        doc["links"] = []
        for l in sorted(model.links, key=lambda l: l.id):
            lo, hi = l.pair()
            entry = {"id": l.id, "a": lo, "b": hi}
            if l.properties:
                entry["properties"] = {
                    k: _encode_scalar(v) for k, v in sorted(l.properties.items())
                }
            doc["links"].append(entry)
    if model.generic_rules:
        doc["generic_rules"] = []
        for r in sorted(model.generic_rules, key=lambda r: r.id):
            entry = {
                "id": r.id,
                "name": r.name,
                "kind": r.kind,
                "scope": r.scope,
                "mode": r.mode,
                "repeatable": r.repeatable,
                "pre": [_atom_payload(a) for a in r.pre],
                "post": [_assignment_payload(a) for a in r.post],
            }
            if r.direction is not None:
                entry["direction"] = r.direction
            if r.parent_filter is not None:
                entry["parent_filter"] = [_atom_payload(a) for a in r.parent_filter]
            doc["generic_rules"].append(entry)
    if model.conventional_facts:
        doc["facts"] = [
            {"id": f.id, "value": _encode_scalar(f.value)}
            for f in sorted(model.conventional_facts, key=lambda f: f.id)
        ]
    if model.conventional_rules:
        doc["conventional_rules"] = [
            {
                "id": r.id,
                "mode": r.mode,
                "repeatable": r.repeatable,
                "pre": [_atom_payload(a) for a in r.pre],
                "post": [_assignment_payload(a) for a in r.post],
            }
            for r in sorted(model.conventional_rules, key=lambda r: r.id)
        ]
    if model.goals:
        doc["goals"] = [
            {"id": g.id, "conditions": [_atom_payload(a) for a in g.conditions]}
            for g in sorted(model.goals, key=lambda g: g.id)
        ]
    return doc


def serialize_model(model: Model) -> bytes:
    """Canonical bytes: equal models serialize byte-identically."""
    text = json.dumps(model_document(model), sort_keys=True, indent=2, ensure_ascii=True)
    return (text + "\n").encode("utf-8")


def model_hash(model: Model) -> str:
    return sha256_hex(serialize_model(model))


# --- observation streams ------------------------------------------------------------

OBSERVATION_KINDS = ("host", "port", "service", "firewalk")
PORT_STATES = ("open", "closed", "filtered")


@dataclass(frozen=True)
class ObservationRecord:
    kind: str
    address: str | None = None
    responded: bool | None = None
    port: int | None = None
    state: str | None = None
    banner: str | None = None
    device: str | None = None
    destination: str | None = None
    forwarded: bool | None = None
    line: int | None = None

    def payload(self) -> dict:
        out: dict = {"type": self.kind}
        for key in ("address", "responded", "port", "state", "banner",
                    "device", "destination", "forwarded"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@dataclass(frozen=True)
class ObservationBatch:
    records: tuple[ObservationRecord, ...]
    diagnostics: tuple[Diagnostic, ...]


def _field(raw: dict, key: str, typ, line: int, diags: list[Diagnostic]):
    if key not in raw:
        diags.append(Diagnostic(line, f"missing field {key!r}"))
        return None
    value = raw[key]
    if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
        diags.append(Diagnostic(line, f"field {key!r} has the wrong type"))
        return None
    return value


def parse_observations(text: str) -> ObservationBatch:
    """One JSON object per line; bad lines become diagnostics, never aborts."""
    records: list[ObservationRecord] = []
    diags: list[Diagnostic] = []
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            diags.append(Diagnostic(line_no, f"not valid JSON: {exc.msg}"))
            continue
        if not isinstance(raw, dict):
            diags.append(Diagnostic(line_no, "observation is not an object"))
            continue
        kind = raw.get("type")
        if kind not in OBSERVATION_KINDS:
            diags.append(Diagnostic(line_no, f"unknown observation type {kind!r}"))
            continue
        before = len(diags)
        if kind == "host":
            address = _field(raw, "address", str, line_no, diags)
            responded = _field(raw, "responded", bool, line_no, diags)
            if len(diags) == before:
                records.append(ObservationRecord(
                    "host", address=address, responded=responded, line=line_no,
                ))
        elif kind == "port":
            address = _field(raw, "address", str, line_no, diags)
            port = _field(raw, "port", int, line_no, diags)
            state = _field(raw, "state", str, line_no, diags)
            if state is not None and state not in PORT_STATES:
                diags.append(Diagnostic(line_no, f"unknown port state {state!r}"))
            if len(diags) == before:
                records.append(ObservationRecord(
                    "port", address=address, port=port, state=state, line=line_no,
                ))
        elif kind == "service":
            address = _field(raw, "address", str, line_no, diags)
            port = _field(raw, "port", int, line_no, diags)
            banner = _field(raw, "banner", str, line_no, diags)
            if len(diags) == before:
                records.append(ObservationRecord(
                    "service", address=address, port=port, banner=banner, line=line_no,
                ))
        else:
            device = _field(raw, "device", str, line_no, diags)
            destination = _field(raw, "destination", str, line_no, diags)
            port = _field(raw, "port", int, line_no, diags)
            forwarded = _field(raw, "forwarded", bool, line_no, diags)
            if len(diags) == before:
                records.append(ObservationRecord(
                    "firewalk", device=device, destination=destination,
                    port=port, forwarded=forwarded, line=line_no,
                ))
    return ObservationBatch(tuple(records), tuple(diags))


def serialize_observations(records: list[ObservationRecord]) -> str:
    return "".join(json.dumps(r.payload(), sort_keys=True) + "\n" for r in records)


# --- expectations from a model ---------------------------------------------------


def _container_expectations(c: Container):
    props = c.properties
    open_ports = None
    if isinstance(props.get(RESERVED_OPEN_PORTS), str):
        open_ports = set(parse_open_ports(props[RESERVED_OPEN_PORTS]))
    services = None
    if isinstance(props.get(RESERVED_SERVICES), str):
        services = parse_services(props[RESERVED_SERVICES])
    forwards = None
    if isinstance(props.get(RESERVED_FORWARDS), str):
        forwards = parse_forwards(props[RESERVED_FORWARDS])
    closed_world = props.get(RESERVED_CLOSED_WORLD) is True
    return open_ports, services, forwards, closed_world


def synthesize_observations(model: Model, *, probe_ports: list[int] | None = None
                            ) -> list[ObservationRecord]:
    """What a complete, honest scan of exactly this model would report.

    probe_ports widens the port sweep; by default every port the model
    mentions anywhere is probed on every addressed container.
    """
    probe: set[int] = set(probe_ports or ())
    if probe_ports is None:
        for c in model.containers:
            open_ports, services, forwards, _ = _container_expectations(c)
            probe |= open_ports or set()
            probe |= set(services or {})
            probe |= {p for _, p, _ in (forwards or []) if p is not None}
    records: list[ObservationRecord] = []
    for c in sorted(model.containers, key=lambda c: c.id):
        open_ports, services, forwards, _ = _container_expectations(c)
        for address in sorted(c.addresses):
            records.append(ObservationRecord("host", address=address, responded=True))
            for port in sorted(probe | (open_ports or set())):
                state = "open" if port in (open_ports or set()) else "closed"
                records.append(ObservationRecord("port", address=address, port=port, state=state))
            for port, banner in sorted((services or {}).items()):
                records.append(ObservationRecord(
                    "service", address=address, port=port, banner=banner,
                ))
        if forwards and c.addresses:
            device = sorted(c.addresses)[0]
            for dest, port, _allow in forwards:
                if port is None or "*" in dest:
                    continue  # wildcards cannot be probed concretely
                decided = match_forward(forwards, dest, port)
                records.append(ObservationRecord(
                    "firewalk", device=device, destination=dest,
                    port=port, forwarded=bool(decided),
                ))
    return records


# --- discrepancy detection ----------------------------------------------------------

DISCREPANCY_KINDS = (
    "unexpected-host",
    "missing-host",
    "unexpected-open-port",
    "expected-port-closed",
    "service-mismatch",
    "filter-mismatch",
)


@dataclass(frozen=True)
class Discrepancy:
    kind: str
    subject: str  # container id, or the bare address for unexpected-host
    detail: str
    expectation: str
    observations: tuple[dict, ...] = ()

    def payload(self) -> dict:
        return {
            "kind": self.kind,
            "subject": self.subject,
            "detail": self.detail,
            "expectation": self.expectation,
            "observations": list(self.observations),
        }


@dataclass(frozen=True)
class DiscrepancyReport:
    model_hash: str
    discrepancies: tuple[Discrepancy, ...]

    def payload(self) -> dict:
        return {
            "model_hash": self.model_hash,
            "discrepancies": [d.payload() for d in self.discrepancies],
        }


def discrepancy_report_from_payload(data: dict) -> DiscrepancyReport:
    return DiscrepancyReport(
        model_hash=data["model_hash"],
        discrepancies=tuple(
            Discrepancy(
                kind=d["kind"],
                subject=d["subject"],
                detail=d["detail"],
                expectation=d["expectation"],
                observations=tuple(d.get("observations", ())),
            )
            for d in data["discrepancies"]
        ),
    )


def detect_discrepancies(model: Model, records: list[ObservationRecord]) -> DiscrepancyReport:
    """Compare scan observations with the model's declared expectations."""
    index = ModelIndex(model)
    owner = index.address_owner
    expectations = {c.id: _container_expectations(c) for c in model.containers}
    found: list[Discrepancy] = []

    by_address: dict[str, list[ObservationRecord]] = {}
    for r in records:
        if r.address is not None:
            by_address.setdefault(r.address, []).append(r)

    responded: set[str] = set()
    for r in records:
        if r.kind == "host" and r.responded:
            responded.add(r.address)

    # hosts that answered but are not in the model
    seen_unexpected: set[str] = set()
    for r in records:
        if r.kind != "host" or not r.responded or r.address in owner:
            continue
        if r.address in seen_unexpected:
            continue
        seen_unexpected.add(r.address)
        evidence = tuple(rec.payload() for rec in by_address.get(r.address, []))
        found.append(Discrepancy(
            kind="unexpected-host",
            subject=r.address,
            detail=r.address,
            expectation="no container claims this address",
            observations=evidence,
        ))

    # modeled addresses that never answered
    for c in sorted(model.containers, key=lambda c: c.id):
        for address in sorted(c.addresses):
            if address in responded:
                continue
            evidence = tuple(
                rec.payload() for rec in by_address.get(address, []) if rec.kind == "host"
            )
            found.append(Discrepancy(
                kind="missing-host",
                subject=c.id,
                detail=address,
                expectation=f"a host at {address} should respond",
                observations=evidence,
            ))

    # port-level checks on claimed addresses
    for r in records:
        if r.kind == "port" and r.address in owner:
            cid = owner[r.address]
            open_ports, _, _, closed_world = expectations[cid]
            expected_open = open_ports or set()
            if r.state == "open":
                if closed_world and r.port not in expected_open:
                    found.append(Discrepancy(
                        kind="unexpected-open-port",
                        subject=cid,
                        detail=f"{r.address}:{r.port}",
                        expectation="closed-world container does not list this port open",
                        observations=(r.payload(),),
                    ))
            elif r.port in expected_open:
                found.append(Discrepancy(
                    kind="expected-port-closed",
                    subject=cid,
                    detail=f"{r.address}:{r.port}",
                    expectation=f"port {r.port} is declared open",
                    observations=(r.payload(),),
                ))
        elif r.kind == "service" and r.address in owner:
            cid = owner[r.address]
            _, services, _, _ = expectations[cid]
            expected = (services or {}).get(r.port)
            if expected is not None and not r.banner.startswith(expected):
                found.append(Discrepancy(
                    kind="service-mismatch",
                    subject=cid,
                    detail=f"{r.address}:{r.port} observed {r.banner!r}",
                    expectation=f"service should match {expected!r}",
                    observations=(r.payload(),),
                ))
        elif r.kind == "firewalk" and r.device in owner:
            cid = owner[r.device]
            _, _, forwards, _ = expectations[cid]
            if forwards is None:
                continue
            expected_fwd = match_forward(forwards, r.destination, r.port)
            if expected_fwd is not None and expected_fwd != r.forwarded:
                found.append(Discrepancy(
                    kind="filter-mismatch",
                    subject=cid,
                    detail=f"{r.destination}:{r.port} observed "
                           f"{'forwarded' if r.forwarded else 'blocked'}",
                    expectation=f"filter matrix says {'allow' if expected_fwd else 'deny'}",
                    observations=(r.payload(),),
                ))

    found.sort(key=lambda d: (d.kind, d.subject, d.detail))
    return DiscrepancyReport(model_hash=model_hash(model), discrepancies=tuple(found))


# --- applying discrepancies -----------------------------------------------------------


def _ports_text(ports: set[int]) -> str:
    return ",".join(str(p) for p in sorted(ports))


def _services_text(services: dict[int, str]) -> str:
    return ";".join(f"{p}={b}" for p, b in sorted(services.items()))


def apply_discrepancies(model: Model, report: DiscrepancyReport, policy: str) -> Model:
    """Fold a discrepancy report back into the model.

    annotate: mark implicated containers with discrepancy:<kind> properties.
    patch: annotate, plus update expectations (ports, services, filters,
    addresses) and add stub containers for unexpected hosts.
    """
    if policy not in ("annotate", "patch"):
        raise ValueError(f"unknown policy {policy!r}")
    if report.model_hash != model_hash(model):
        raise StaleDiscrepancies(
            "the report was computed against a different version of this model"
        )
    containers: dict[str, Container] = {c.id: c for c in model.containers}

    def update(cid: str, **changes) -> None:
        c = containers[cid]
        fields = dict(
            id=c.id, name=c.name, parent=c.parent, properties=dict(c.properties),
            impact=c.impact, addresses=c.addresses,
        )
        fields.update(changes)
        containers[cid] = Container(**fields)

    def mark(cid: str, kind: str) -> None:
        props = dict(containers[cid].properties)
        props[RESERVED_MARKER_PREFIX + kind] = True
        update(cid, properties=props)

    stub_order: list[str] = []
    for d in report.discrepancies:
        patching = policy == "patch"
        if d.kind == "unexpected-host":
            if not patching:
                continue  # no container to annotate
            stub_id = f"observed:{d.subject}"
            if stub_id in containers:
                continue
            open_ports: set[int] = set()
            services: dict[int, str] = {}
            for obs in d.observations:
                if obs.get("type") == "port" and obs.get("state") == "open":
                    open_ports.add(obs["port"])
                elif obs.get("type") == "service":
                    services[obs["port"]] = obs["banner"]
            props: dict = {RESERVED_MARKER_PREFIX + d.kind: True}
            if open_ports:
                props[RESERVED_OPEN_PORTS] = _ports_text(open_ports)
            if services:
                props[RESERVED_SERVICES] = _services_text(services)
            containers[stub_id] = Container(
                id=stub_id, name=d.subject, properties=props, addresses=(d.subject,),
            )
            stub_order.append(stub_id)
            continue
        if d.subject not in containers:
            continue
        mark(d.subject, d.kind)
        if not patching:
            continue
        c = containers[d.subject]
        props = dict(c.properties)
        def declared_text(name: str) -> str:
            value = props.get(name)
            return value if isinstance(value, str) else ""

        if d.kind == "missing-host":
            update(d.subject, addresses=tuple(a for a in c.addresses if a != d.detail))
        elif d.kind == "unexpected-open-port":
            ports = set(parse_open_ports(declared_text(RESERVED_OPEN_PORTS)))
            ports.add(int(d.detail.rsplit(":", 1)[1]))
            props[RESERVED_OPEN_PORTS] = _ports_text(ports)
            update(d.subject, properties=props)
        elif d.kind == "expected-port-closed":
            ports = set(parse_open_ports(declared_text(RESERVED_OPEN_PORTS)))
            ports.discard(int(d.detail.rsplit(":", 1)[1]))
            props[RESERVED_OPEN_PORTS] = _ports_text(ports)
            update(d.subject, properties=props)
        elif d.kind == "service-mismatch":
            services = parse_services(declared_text(RESERVED_SERVICES))
            obs = d.observations[0]
            services[obs["port"]] = obs["banner"]
            props[RESERVED_SERVICES] = _services_text(services)
            update(d.subject, properties=props)
        elif d.kind == "filter-mismatch":
            obs = d.observations[0]
            action = "allow" if obs["forwarded"] else "deny"
            entry = f"{obs['destination']}:{obs['port']}:{action}"
            existing = declared_text(RESERVED_FORWARDS)
            props[RESERVED_FORWARDS] = entry + (";" + existing if existing else "")
            update(d.subject, properties=props)

    ordered = [containers[c.id] for c in model.containers if c.id in containers]
    ordered.extend(containers[sid] for sid in stub_order)
    return Model(
        name=model.name,
        provenance=model.provenance,
        severity_scale=model.severity_scale,
        containers=tuple(ordered),
        links=model.links,
        generic_rules=model.generic_rules,
        conventional_facts=model.conventional_facts,
        conventional_rules=model.conventional_rules,
        goals=model.goals,
    )
