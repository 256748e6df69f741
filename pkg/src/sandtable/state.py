"""World state: the mutable truth a model's rules read and write.

A WorldState is a frame over exactly the model's containers and facts.
Link properties are static configuration and stay on the model itself.
States are treated as immutable; apply_assignments returns a new one.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ModelMismatch, ModelValidationError, UnknownSubject
from .model import (
    ABSENT,
    Model,
    PropertyValue,
    UNKNOWN,
    canonical_json,
    encode_value,
    sha256_hex,
    validate_model,
)


@dataclass(frozen=True, eq=False)
class WorldState:
    container_properties: dict[str, dict[str, PropertyValue]]
    facts: dict[str, PropertyValue]


@dataclass(frozen=True)
class BoundAssignment:
    """An assignment whose subject is already resolved: a container id or fact:<id>.

    value may be ABSENT, meaning "remove the property"; rules never produce
    that, it exists so a state diff can be replayed as assignments.
    """

    subject: str
    property: str | None
    value: PropertyValue


@dataclass(frozen=True)
class Symptom:
    """One observable change between two states."""

    subject: str  # container id or fact:<id>
    property: str | None
    old: PropertyValue
    new: PropertyValue

    def sort_key(self) -> tuple:
        return (self.subject, self.property or "", repr(self.old), repr(self.new))

    def as_assignment(self) -> BoundAssignment:
        return BoundAssignment(self.subject, self.property, self.new)


def decode_value(raw) -> PropertyValue:
    """JSON scalar -> property value (null -> unknown, absent marker -> ABSENT)."""
    if raw is None:
        return UNKNOWN
    if isinstance(raw, dict) and raw.get("absent") is True:
        return ABSENT
    return raw


def symptom_payload(s: Symptom) -> dict:
    return {
        "subject": s.subject,
        "property": s.property,
        "old": encode_value(s.old),
        "new": encode_value(s.new),
    }


def symptom_from_payload(data: dict) -> Symptom:
    return Symptom(
        subject=data["subject"],
        property=data["property"],
        old=decode_value(data["old"]),
        new=decode_value(data["new"]),
    )


def initial_state(model: Model, *, validated: bool = False) -> WorldState:
    """Starting state: declared container properties plus declared fact values."""
    if not validated:
        violations = validate_model(model)
        if violations:
            raise ModelValidationError(violations)
    return WorldState(
        container_properties={c.id: dict(c.properties) for c in model.containers},
        facts={f.id: f.value for f in model.conventional_facts},
    )


def apply_assignments(state: WorldState, assignments: list[BoundAssignment]) -> WorldState:
    """Apply in order (last writer wins); untouched entries carry over unchanged."""
    containers = dict(state.container_properties)
    facts = dict(state.facts)
    touched: set[str] = set()
    for a in assignments:
        if a.subject.startswith("fact:"):
            fact_id = a.subject[5:]
            if fact_id not in facts:
                raise UnknownSubject(f"fact {fact_id!r} is not part of this state")
            facts[fact_id] = a.value
            continue
        if a.subject not in containers:
            raise UnknownSubject(f"container {a.subject!r} is not part of this state")
        if a.property is None:
            raise UnknownSubject(f"container assignment to {a.subject!r} needs a property")
        if a.subject not in touched:
            containers[a.subject] = dict(containers[a.subject])
            touched.add(a.subject)
        if a.value is ABSENT:
            containers[a.subject].pop(a.property, None)
        else:
            containers[a.subject][a.property] = a.value
    return WorldState(container_properties=containers, facts=facts)


def state_payload(state: WorldState) -> dict:
    return {
        "containers": {
            cid: {name: encode_value(v) for name, v in sorted(props.items())}
            for cid, props in sorted(state.container_properties.items())
        },
        "facts": {fid: encode_value(v) for fid, v in sorted(state.facts.items())},
    }


def state_hash(state: WorldState) -> str:
    """Order-insensitive content hash; equal states hash equal by construction."""
    return sha256_hex(canonical_json(state_payload(state)))


def values_equal(a: PropertyValue, b: PropertyValue) -> bool:
    """Value identity for diffs: same kind and equal (so True is not 1)."""
    if a is b:
        return True
    if type(a) is not type(b):
        return False
    return a == b


def diff_states(before: WorldState, after: WorldState) -> list[Symptom]:
    """Every (subject, property, old, new) that changed, canonically ordered.

    Both states must be frames over the same model; a missing property is
    reported as ABSENT on that side.
    """
    if (
        before.container_properties.keys() != after.container_properties.keys()
        or before.facts.keys() != after.facts.keys()
    ):
        raise ModelMismatch("states do not cover the same containers and facts")
    symptoms: list[Symptom] = []
    for cid in before.container_properties:
        old_props = before.container_properties[cid]
        new_props = after.container_properties[cid]
        for name in old_props.keys() | new_props.keys():
            old = old_props.get(name, ABSENT)
            new = new_props.get(name, ABSENT)
            if not values_equal(old, new):
                symptoms.append(Symptom(cid, name, old, new))
    for fid in before.facts:
        old, new = before.facts[fid], after.facts[fid]
        if not values_equal(old, new):
            symptoms.append(Symptom(f"fact:{fid}", None, old, new))
    symptoms.sort(key=Symptom.sort_key)
    return symptoms
