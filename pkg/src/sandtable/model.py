"""Threat-model vocabulary: values, containers, links, rules, facts, goals, validation.

A model is a static description of an environment: containers (systems,
devices, facilities, people) joined by links and by parent-child nesting,
plus the rules that describe how attacks, configuration changes, and
propagation move through it.  Mutable truth lives in WorldState (state.py);
everything here is immutable once constructed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import KindMismatch

PROVENANCES = ("operational", "clone", "twin", "cousin", "spot", "extrapolated")
RULE_KINDS = ("attack", "configuration-change", "propagation")
RULE_SCOPES = ("link", "parent-child", "multi-child", "sibling")
RULE_MODES = ("triggered", "automatic")
LINK_DIRECTIONS = ("directed", "symmetric")
PREDICATES = ("equals", "not-equals", "present", "absent")

# Property names with package-defined encodings, used by scan reconciliation.
RESERVED_OPEN_PORTS = "open_ports"
RESERVED_SERVICES = "services"
RESERVED_FORWARDS = "forwards"
RESERVED_CLOSED_WORLD = "closed_world"
RESERVED_MARKER_PREFIX = "discrepancy:"


class _Sentinel:
    """Interned marker value; survives copy/deepcopy as the same object."""

    __slots__ = ("_label",)

    def __init__(self, label: str):
        self._label = label

    def __repr__(self) -> str:
        return self._label

    def __copy__(self) -> "_Sentinel":
        return self

    def __deepcopy__(self, memo) -> "_Sentinel":
        return self


#: A property whose value nobody knows.  Satisfies no precondition atom.
UNKNOWN = _Sentinel("UNKNOWN")
#: Diff marker for "the property does not exist on this side".
ABSENT = _Sentinel("ABSENT")

PropertyValue = bool | int | str | _Sentinel


def value_kind(value: PropertyValue) -> str:
    """Classify a property value: boolean, integer, text, or unknown."""
    if value is UNKNOWN:
        return "unknown"
    if isinstance(value, bool):  # bool before int: True is an int in Python
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, str):
        return "text"
    raise TypeError(f"unsupported property value: {value!r}")


def check_comparable(a: PropertyValue, b: PropertyValue) -> None:
    """Raise KindMismatch unless both values are known and share a kind."""
    ka, kb = value_kind(a), value_kind(b)
    if ka == "unknown" or kb == "unknown":
        raise KindMismatch("cannot compare unknown values")
    if ka != kb:
        raise KindMismatch(f"cannot compare {ka} with {kb}")


def encode_value(value: PropertyValue):
    """Property value -> JSON-compatible scalar (unknown -> null)."""
    if value is UNKNOWN:
        return None
    if value is ABSENT:
        return {"absent": True}
    return value


def canonical_json(payload) -> str:
    """The package-wide canonical JSON rendering: sorted keys, compact."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ConditionAtom:
    """One precondition: subject's property compared under a predicate.

    subject is one of the scope placeholders (source, target, link, parent,
    child) or a global reference (fact:<id>, container:<id>).  For fact
    subjects ``property`` is None; the fact itself carries the value.
    """

    subject: str
    predicate: str
    property: str | None = None
    value: PropertyValue | None = None

    @staticmethod
    def equals(subject: str, property: str | None, value: PropertyValue) -> "ConditionAtom":
        return ConditionAtom(subject, "equals", property, value)

    @staticmethod
    def not_equals(subject: str, property: str | None, value: PropertyValue) -> "ConditionAtom":
        return ConditionAtom(subject, "not-equals", property, value)

    @staticmethod
    def present(subject: str, property: str | None = None) -> "ConditionAtom":
        return ConditionAtom(subject, "present", property)

    @staticmethod
    def absent(subject: str, property: str | None = None) -> "ConditionAtom":
        return ConditionAtom(subject, "absent", property)


@dataclass(frozen=True)
class Assignment:
    """One postcondition: set subject.property to value (facts have no property)."""

    subject: str
    property: str | None
    value: PropertyValue


@dataclass(frozen=True)
class Impact:
    category: str
    severity: str


@dataclass(frozen=True, eq=False)
class Container:
    id: str
    name: str
    parent: str | None = None
    properties: dict[str, PropertyValue] = field(default_factory=dict)
    impact: Impact | None = None
    addresses: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class Link:
    """Undirected connection between two distinct containers."""

    id: str
    a: str
    b: str
    properties: dict[str, PropertyValue] = field(default_factory=dict)

    def pair(self) -> tuple[str, str]:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)


@dataclass(frozen=True, eq=False)
class GenericRule:
    """A reusable rule matched structurally over the model's topology."""

    id: str
    name: str
    kind: str  # attack | configuration-change | propagation
    scope: str  # link | parent-child | multi-child | sibling
    pre: tuple[ConditionAtom, ...]
    post: tuple[Assignment, ...]
    mode: str = "triggered"
    repeatable: bool = False
    direction: str | None = None  # link scope only: directed | symmetric
    parent_filter: tuple[ConditionAtom, ...] | None = None  # sibling scope only


@dataclass(frozen=True)
class ConventionalFact:
    """A statement about the operational environment, e.g. public sentiment."""

    id: str
    value: PropertyValue


@dataclass(frozen=True, eq=False)
class ConventionalRule:
    """Rule over conventional facts and named containers; no structural scope."""

    id: str
    pre: tuple[ConditionAtom, ...]
    post: tuple[Assignment, ...]
    mode: str = "triggered"
    repeatable: bool = False


@dataclass(frozen=True, eq=False)
class Goal:
    id: str
    conditions: tuple[ConditionAtom, ...]


@dataclass(frozen=True, eq=False)
class Model:
    name: str
    provenance: str = "operational"
    severity_scale: tuple[str, ...] = ()
    containers: tuple[Container, ...] = ()
    links: tuple[Link, ...] = ()
    generic_rules: tuple[GenericRule, ...] = ()
    conventional_facts: tuple[ConventionalFact, ...] = ()
    conventional_rules: tuple[ConventionalRule, ...] = ()
    goals: tuple[Goal, ...] = ()


class ModelIndex:
    """Id-keyed lookups over a model; build once, share across operations."""

    def __init__(self, model: Model):
        self.model = model
        self.containers: dict[str, Container] = {c.id: c for c in model.containers}
        self.links: dict[str, Link] = {l.id: l for l in model.links}
        self.facts: dict[str, ConventionalFact] = {f.id: f for f in model.conventional_facts}
        self.generic_rules: dict[str, GenericRule] = {r.id: r for r in model.generic_rules}
        self.conventional_rules: dict[str, ConventionalRule] = {
            r.id: r for r in model.conventional_rules
        }
        self.goals: dict[str, Goal] = {g.id: g for g in model.goals}
        children: dict[str, list[str]] = {c.id: [] for c in model.containers}
        for c in model.containers:
            if c.parent is not None and c.parent in children:
                children[c.parent].append(c.id)
        self.children: dict[str, tuple[str, ...]] = {
            cid: tuple(sorted(kids)) for cid, kids in children.items()
        }
        self.address_owner: dict[str, str] = {}
        for c in model.containers:
            for addr in c.addresses:
                self.address_owner.setdefault(addr, c.id)

    def rule(self, rule_id: str) -> GenericRule | ConventionalRule | None:
        return self.generic_rules.get(rule_id) or self.conventional_rules.get(rule_id)

    def ancestors(self, cid: str) -> list[str]:
        """Chain of parents above cid (nearest first); cycles are cut, not followed."""
        seen = {cid}
        out: list[str] = []
        cur = self.containers.get(cid)
        while cur is not None and cur.parent is not None and cur.parent not in seen:
            out.append(cur.parent)
            seen.add(cur.parent)
            cur = self.containers.get(cur.parent)
        return out

    def descendants(self, cid: str) -> list[str]:
        out: list[str] = []
        stack = list(self.children.get(cid, ()))
        while stack:
            kid = stack.pop()
            if kid in out:
                continue
            out.append(kid)
            stack.extend(self.children.get(kid, ()))
        return sorted(out)


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.subject}: {self.message}"


# --- reserved-property text encodings -------------------------------------
#
# Scan expectations are scalar-valued properties, so structured data uses
# small text formats: open_ports "22,80", services "22=OpenSSH;80=Apache",
# forwards "10.0.0.3:22:allow;*:*:deny" (first matching entry wins).


def parse_open_ports(text: str) -> list[int]:
    if text.strip() == "":
        return []
    ports = []
    for part in text.split(","):
        part = part.strip()
        if not part.isdigit():
            raise ValueError(f"bad port {part!r}")
        port = int(part)
        if not 0 < port < 65536:
            raise ValueError(f"port out of range: {port}")
        ports.append(port)
    return ports


def parse_services(text: str) -> dict[int, str]:
    if text.strip() == "":
        return {}
    services: dict[int, str] = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        port_text, sep, banner = part.partition("=")
        if not sep or not port_text.strip().isdigit():
            raise ValueError(f"bad service entry {part!r}")
        services[int(port_text.strip())] = banner.strip()
    return services


def parse_forwards(text: str) -> list[tuple[str, int | None, bool]]:
    """Entries (destination-pattern, port-or-any, allow); '*' wildcards both."""
    if text.strip() == "":
        return []
    entries: list[tuple[str, int | None, bool]] = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        pieces = part.rsplit(":", 2)
        if len(pieces) != 3:
            raise ValueError(f"bad forward entry {part!r}")
        dest, port_text, action = (p.strip() for p in pieces)
        if action not in ("allow", "deny"):
            raise ValueError(f"bad forward action {action!r}")
        if port_text == "*":
            port: int | None = None
        elif port_text.isdigit():
            port = int(port_text)
        else:
            raise ValueError(f"bad forward port {port_text!r}")
        entries.append((dest, port, action == "allow"))
    return entries


def match_forward(entries: list[tuple[str, int | None, bool]], destination: str, port: int) -> bool | None:
    """First matching entry decides; None when nothing matches."""
    for dest, entry_port, allow in entries:
        if entry_port is not None and entry_port != port:
            continue
        if dest == "*" or dest == destination:
            return allow
        if dest.endswith("*") and destination.startswith(dest[:-1]):
            return allow
    return None


# --- validation ------------------------------------------------------------

_GLOBAL_SUBJECT_PREFIXES = ("fact:", "container:")

# Placeholders a rule's preconditions may mention, by scope.  Global
# fact:/container: subjects are additionally allowed in any precondition.
_PRE_SUBJECTS = {
    "link": {"source", "target", "link"},
    "parent-child": {"parent", "child"},
    "multi-child": {"parent", "child"},
    "sibling": {"source", "target"},
}

# Post assignments may only write subjects the scope binds.  Link properties
# are static configuration, so "link" is never writable.
_POST_SUBJECTS = {
    "link": {"source", "target"},
    "parent-child": {"parent", "child"},
    "multi-child": {"parent", "child"},
    "sibling": {"source", "target"},
}


def _is_global_subject(subject: str) -> bool:
    return subject.startswith(_GLOBAL_SUBJECT_PREFIXES)


class _Validator:
    def __init__(self, model: Model):
        self.model = model
        self.index = ModelIndex(model)
        self.violations: list[Violation] = []
        # property name -> kind -> first location seen (containers+links+rules
        # share one registry; facts get their own, keyed by fact id)
        self.prop_kinds: dict[str, dict[str, str]] = {}
        self.fact_kinds: dict[str, dict[str, str]] = {}

    def add(self, kind: str, subject: str, message: str) -> None:
        self.violations.append(Violation(kind, subject, message))

    def note_prop(self, name: str, value: PropertyValue, where: str) -> None:
        kind = value_kind(value)
        if kind == "unknown":
            return
        self.prop_kinds.setdefault(name, {}).setdefault(kind, where)

    def note_fact(self, fact_id: str, value: PropertyValue, where: str) -> None:
        kind = value_kind(value)
        if kind == "unknown":
            return
        self.fact_kinds.setdefault(fact_id, {}).setdefault(kind, where)

    # -- id uniqueness ------------------------------------------------------

    def check_ids(self) -> None:
        def dupes(ids: list[str]) -> list[str]:
            seen, out = set(), []
            for i in ids:
                if i in seen and i not in out:
                    out.append(i)
                seen.add(i)
            return out

        m = self.model
        for label, ids in (
            ("container", [c.id for c in m.containers]),
            ("link", [l.id for l in m.links]),
            ("rule", [r.id for r in m.generic_rules] + [r.id for r in m.conventional_rules]),
            ("fact", [f.id for f in m.conventional_facts]),
            ("goal", [g.id for g in m.goals]),
        ):
            for d in dupes(ids):
                self.add("duplicate-id", d, f"{label} id declared more than once")

    # -- containers ---------------------------------------------------------

    def check_containers(self) -> None:
        m = self.model
        scale = set(m.severity_scale)
        claimed: dict[str, str] = {}
        for c in m.containers:
            if c.parent is not None:
                if c.parent == c.id:
                    self.add("parent-cycle", c.id, "container is its own parent")
                elif c.parent not in self.index.containers:
                    self.add("dangling-reference", c.id, f"parent {c.parent!r} does not exist")
            if c.impact is not None and c.impact.severity not in scale:
                self.add(
                    "shape", c.id,
                    f"impact severity {c.impact.severity!r} is not on the model's scale",
                )
            for addr in c.addresses:
                if addr in claimed and claimed[addr] != c.id:
                    self.add(
                        "duplicate-id", addr,
                        f"address claimed by both {claimed[addr]!r} and {c.id!r}",
                    )
                claimed.setdefault(addr, c.id)
            for name, value in c.properties.items():
                self.note_prop(name, value, f"container {c.id}")
            self.check_reserved(c)
        # parent cycles beyond self-loops
        state: dict[str, int] = {}  # 0 visiting, 1 done

        def walk(cid: str, trail: list[str]) -> None:
            state[cid] = 0
            parent = self.index.containers[cid].parent
            # self-parenting already reported above
            if parent is not None and parent != cid and parent in self.index.containers:
                if state.get(parent) == 0:
                    cycle = trail[trail.index(parent):] if parent in trail else [parent]
                    self.add(
                        "parent-cycle", parent,
                        "nesting loops through " + " -> ".join(cycle + [parent]),
                    )
                elif parent not in state:
                    walk(parent, trail + [parent])
            state[cid] = 1

        for c in m.containers:
            if c.id not in state:
                walk(c.id, [c.id])

    def check_reserved(self, c: Container) -> None:
        props = c.properties
        for name, parser in (
            (RESERVED_OPEN_PORTS, parse_open_ports),
            (RESERVED_SERVICES, parse_services),
            (RESERVED_FORWARDS, parse_forwards),
        ):
            if name in props and props[name] is not UNKNOWN:
                value = props[name]
                if not isinstance(value, str):
                    self.add("reserved-property", c.id, f"{name} must be text")
                    continue
                try:
                    parser(value)
                except ValueError as exc:
                    self.add("reserved-property", c.id, f"{name}: {exc}")
        cw = props.get(RESERVED_CLOSED_WORLD)
        if cw is not None and cw is not UNKNOWN and not isinstance(cw, bool):
            self.add("reserved-property", c.id, f"{RESERVED_CLOSED_WORLD} must be boolean")

    # -- links ----------------------------------------------------------------

    def check_links(self) -> None:
        pairs: dict[tuple[str, str], str] = {}
        for l in self.model.links:
            for end in (l.a, l.b):
                if end not in self.index.containers:
                    self.add("dangling-reference", l.id, f"endpoint {end!r} does not exist")
            if l.a == l.b:
                self.add("shape", l.id, "link joins a container to itself")
            else:
                pair = l.pair()
                if pair in pairs:
                    self.add(
                        "duplicate-id", l.id,
                        f"pair {pair[0]}--{pair[1]} already linked by {pairs[pair]!r}",
                    )
                pairs.setdefault(pair, l.id)
            for name, value in l.properties.items():
                self.note_prop(name, value, f"link {l.id}")

    # -- shared atom/assignment checks ---------------------------------------

    def check_atom(self, atom: ConditionAtom, owner: str, allowed: set[str], *,
                   globals_ok: bool) -> None:
        subj = atom.subject
        if _is_global_subject(subj):
            if not globals_ok:
                self.add("scope-violation", owner, f"subject {subj!r} not allowed here")
            else:
                self.check_global_subject(subj, owner)
        elif subj not in allowed:
            self.add("scope-violation", owner, f"subject {subj!r} not available in this scope")
        if atom.predicate not in PREDICATES:
            self.add("shape", owner, f"unknown predicate {atom.predicate!r}")
            return
        if atom.predicate in ("equals", "not-equals"):
            if atom.value is None:
                self.add("shape", owner, f"{atom.predicate} atom needs a value")
            elif atom.value is UNKNOWN:
                self.add("shape", owner, "atoms cannot compare against an unknown value")
            else:
                if subj.startswith("fact:"):
                    self.note_fact(subj[5:], atom.value, owner)
                elif atom.property is not None:
                    self.note_prop(atom.property, atom.value, owner)
        elif atom.value is not None:
            self.add("shape", owner, f"{atom.predicate} atom must not carry a value")
        if subj.startswith("fact:"):
            if atom.property is not None:
                self.add("shape", owner, "fact atoms have no property")
        elif atom.property is None:
            self.add("shape", owner, "container atoms need a property")

    def check_global_subject(self, subj: str, owner: str) -> None:
        if subj.startswith("fact:"):
            if subj[5:] not in self.index.facts:
                self.add("dangling-reference", owner, f"fact {subj[5:]!r} does not exist")
        else:
            if subj[10:] not in self.index.containers:
                self.add("dangling-reference", owner, f"container {subj[10:]!r} does not exist")

    def check_assignment(self, a: Assignment, owner: str, allowed: set[str], *,
                         globals_ok: bool) -> None:
        subj = a.subject
        if _is_global_subject(subj):
            if not globals_ok:
                self.add("scope-violation", owner, f"cannot write {subj!r} from this rule")
            else:
                self.check_global_subject(subj, owner)
        elif subj not in allowed:
            self.add("scope-violation", owner, f"subject {subj!r} is not writable in this scope")
        if subj.startswith("fact:"):
            if a.property is not None:
                self.add("shape", owner, "fact assignments have no property")
            self.note_fact(subj[5:], a.value, owner)
        else:
            if a.property is None:
                self.add("shape", owner, "container assignments need a property")
            else:
                self.note_prop(a.property, a.value, owner)
        if a.value is ABSENT or a.value is None:
            self.add("shape", owner, "assignments need a concrete value")

    # -- rules ----------------------------------------------------------------

    def check_generic_rules(self) -> None:
        for r in self.model.generic_rules:
            owner = f"rule {r.id}"
            if r.kind not in RULE_KINDS:
                self.add("shape", r.id, f"unknown rule kind {r.kind!r}")
            if r.mode not in RULE_MODES:
                self.add("shape", r.id, f"unknown rule mode {r.mode!r}")
            if r.scope not in RULE_SCOPES:
                self.add("shape", r.id, f"unknown rule scope {r.scope!r}")
                continue
            if r.scope == "link":
                if r.direction not in LINK_DIRECTIONS:
                    self.add("shape", r.id, f"link rules need a direction, got {r.direction!r}")
            elif r.direction is not None:
                self.add("shape", r.id, "direction applies to link-scope rules only")
            if r.parent_filter is not None and r.scope != "sibling":
                self.add("shape", r.id, "parent-filter applies to sibling-scope rules only")
            pre_ok = _PRE_SUBJECTS[r.scope]
            post_ok = _POST_SUBJECTS[r.scope]
            for atom in r.pre:
                self.check_atom(atom, owner, pre_ok, globals_ok=True)
            if r.parent_filter and r.scope == "sibling":
                for atom in r.parent_filter:
                    self.check_atom(atom, owner + " parent-filter", {"parent"}, globals_ok=False)
            if not r.post:
                self.add("shape", r.id, "rules must assign at least one postcondition")
            for a in r.post:
                self.check_assignment(a, owner, post_ok, globals_ok=False)

    def check_conventional(self) -> None:
        for f in self.model.conventional_facts:
            self.note_fact(f.id, f.value, f"fact {f.id}")
        for r in self.model.conventional_rules:
            owner = f"rule {r.id}"
            if r.mode not in RULE_MODES:
                self.add("shape", r.id, f"unknown rule mode {r.mode!r}")
            for atom in r.pre:
                self.check_atom(atom, owner, set(), globals_ok=True)
            if not r.post:
                self.add("shape", r.id, "rules must assign at least one postcondition")
            for a in r.post:
                self.check_assignment(a, owner, set(), globals_ok=True)

    def check_goals(self) -> None:
        for g in self.model.goals:
            owner = f"goal {g.id}"
            if not g.conditions:
                self.add("shape", g.id, "goal has no conditions")
            for atom in g.conditions:
                self.check_atom(atom, owner, set(), globals_ok=True)

    # -- model header ---------------------------------------------------------

    def check_header(self) -> None:
        if self.model.provenance not in PROVENANCES:
            self.add("shape", self.model.name, f"unknown provenance {self.model.provenance!r}")

    def finish_registry(self) -> None:
        for name, kinds in self.prop_kinds.items():
            if len(kinds) > 1:
                detail = ", ".join(f"{k} at {w}" for k, w in sorted(kinds.items()))
                self.add("type-mismatch", name, f"property used with conflicting kinds: {detail}")
        for fact_id, kinds in self.fact_kinds.items():
            if len(kinds) > 1:
                detail = ", ".join(f"{k} at {w}" for k, w in sorted(kinds.items()))
                self.add("type-mismatch", fact_id, f"fact used with conflicting kinds: {detail}")

    def run(self) -> list[Violation]:
        self.check_header()
        self.check_ids()
        self.check_containers()
        self.check_links()
        self.check_generic_rules()
        self.check_conventional()
        self.check_goals()
        self.finish_registry()
        uniq = sorted(set(self.violations), key=lambda v: (v.kind, v.subject, v.message))
        return uniq


def validate_model(model: Model) -> list[Violation]:
    """Collect every violation in the model; empty list means valid."""
    return _Validator(model).run()
