"""Forward-chaining rule engine: sites, bindings, firings, closure.

Generic rules are matched structurally against the model topology, giving
candidate sites; a (rule, site) pair whose preconditions hold in a state is
an enabled binding.  Conventional rules have a single degenerate site.
Fired bindings accumulate on a Trajectory, which enforces run-once for
non-repeatable rules.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .errors import ClosureBudgetExceeded, RuleNotEnabled, UnknownSubject
from .model import (
    ABSENT,
    ConditionAtom,
    ConventionalRule,
    GenericRule,
    Goal,
    Model,
    ModelIndex,
    PropertyValue,
    UNKNOWN,
    check_comparable,
)
from .state import (
    BoundAssignment,
    Symptom,
    WorldState,
    apply_assignments,
    state_hash,
    symptom_from_payload,
    symptom_payload,
    values_equal,
)

# --- sites -------------------------------------------------------------------


@dataclass(frozen=True)
class LinkSite:
    link: str
    source: str
    target: str

    def key(self) -> str:
        return f"link:{self.link}:{self.source}->{self.target}"


@dataclass(frozen=True)
class NestSite:
    parent: str
    child: str

    def key(self) -> str:
        return f"nest:{self.parent}/{self.child}"


@dataclass(frozen=True)
class ChildrenSite:
    parent: str

    def key(self) -> str:
        return f"children:{self.parent}"


@dataclass(frozen=True)
class SiblingSite:
    parent: str
    source: str
    target: str

    def key(self) -> str:
        return f"sib:{self.parent}:{self.source}->{self.target}"


@dataclass(frozen=True)
class ConventionalSite:
    def key(self) -> str:
        return "conventional"


Site = LinkSite | NestSite | ChildrenSite | SiblingSite | ConventionalSite


def site_payload(site: Site) -> dict:
    if isinstance(site, LinkSite):
        return {"type": "link", "link": site.link, "source": site.source, "target": site.target}
    if isinstance(site, NestSite):
        return {"type": "parent-child", "parent": site.parent, "child": site.child}
    if isinstance(site, ChildrenSite):
        return {"type": "multi-child", "parent": site.parent}
    if isinstance(site, SiblingSite):
        return {
            "type": "sibling",
            "parent": site.parent,
            "source": site.source,
            "target": site.target,
        }
    return {"type": "conventional"}


def site_from_payload(data: dict) -> Site:
    kind = data.get("type")
    if kind == "link":
        return LinkSite(data["link"], data["source"], data["target"])
    if kind == "parent-child":
        return NestSite(data["parent"], data["child"])
    if kind == "multi-child":
        return ChildrenSite(data["parent"])
    if kind == "sibling":
        return SiblingSite(data["parent"], data["source"], data["target"])
    if kind == "conventional":
        return ConventionalSite()
    raise UnknownSubject(f"unknown site type {kind!r}")


@dataclass(frozen=True)
class Binding:
    rule_id: str
    site: Site

    def site_key(self) -> str:
        return self.site.key()

    def sort_key(self) -> tuple[str, str]:
        return (self.rule_id, self.site.key())

    def payload(self) -> dict:
        return {"rule": self.rule_id, "site": site_payload(self.site)}


def binding_from_payload(data: dict) -> Binding:
    return Binding(data["rule"], site_from_payload(data["site"]))


@dataclass(frozen=True)
class Firing:
    """One applied binding with the state hashes and diff that anchor it."""

    binding: Binding
    pre_hash: str
    post_hash: str
    diff: tuple[Symptom, ...]

    def key(self) -> tuple[str, str]:
        return (self.binding.rule_id, self.binding.site_key())


def firing_payload(firing: Firing) -> dict:
    return {
        "binding": firing.binding.payload(),
        "pre_hash": firing.pre_hash,
        "post_hash": firing.post_hash,
        "diff": [symptom_payload(s) for s in firing.diff],
    }


def firing_from_payload(data: dict) -> Firing:
    return Firing(
        binding=binding_from_payload(data["binding"]),
        pre_hash=data["pre_hash"],
        post_hash=data["post_hash"],
        diff=tuple(symptom_from_payload(s) for s in data["diff"]),
    )


class Trajectory:
    """Growing record of firings plus the run-once ledger."""

    def __init__(self, initial_hash: str,
                 fired: frozenset[tuple[str, str]] = frozenset()):
        self.initial_hash = initial_hash
        self.firings: list[Firing] = []
        self._fired: set[tuple[str, str]] = set(fired)
        self._added: list[bool] = []

    def __len__(self) -> int:
        return len(self.firings)

    def has_fired(self, rule_id: str, site_key: str) -> bool:
        return (rule_id, site_key) in self._fired

    def fired_snapshot(self) -> frozenset[tuple[str, str]]:
        return frozenset(self._fired)

    def extend(self, firing: Firing, repeatable: bool) -> None:
        key = firing.key()
        added = not repeatable and key not in self._fired
        if added:
            self._fired.add(key)
        self.firings.append(firing)
        self._added.append(added)

    def retract(self) -> Firing:
        firing = self.firings.pop()
        if self._added.pop():
            self._fired.discard(firing.key())
        return firing

    def current_hash(self) -> str:
        return self.firings[-1].post_hash if self.firings else self.initial_hash


# --- candidate sites ---------------------------------------------------------


def _as_index(model: Model | ModelIndex) -> ModelIndex:
    if isinstance(model, ModelIndex):
        return model
    return ModelIndex(model)


def candidate_sites(index: ModelIndex, rule: GenericRule | ConventionalRule) -> list[Site]:
    """Every site a rule could bind in this model's topology, in key order."""
    cache = getattr(index, "_site_cache", None)
    if cache is None:
        cache = {}
        index._site_cache = cache  # type: ignore[attr-defined]
    if rule.id in cache:
        return cache[rule.id]
    sites: list[Site] = []
    if isinstance(rule, ConventionalRule):
        sites.append(ConventionalSite())
    elif rule.scope == "link":
        for link in index.model.links:
            lo, hi = link.pair()
            if rule.direction == "symmetric":
                sites.append(LinkSite(link.id, lo, hi))
            else:
                sites.append(LinkSite(link.id, link.a, link.b))
                sites.append(LinkSite(link.id, link.b, link.a))
    elif rule.scope == "parent-child":
        for c in index.model.containers:
            if c.parent is not None and c.parent in index.containers:
                sites.append(NestSite(c.parent, c.id))
    elif rule.scope == "multi-child":
        for cid, kids in index.children.items():
            if kids:
                sites.append(ChildrenSite(cid))
    elif rule.scope == "sibling":
        for cid, kids in index.children.items():
            for src in kids:
                for dst in kids:
                    if src != dst:
                        sites.append(SiblingSite(cid, src, dst))
    sites.sort(key=lambda s: s.key())
    cache[rule.id] = sites
    return sites


# --- atom evaluation ---------------------------------------------------------


def _container_subject(site: Site, subject: str) -> str | None:
    if isinstance(site, LinkSite) or isinstance(site, SiblingSite):
        if subject == "source":
            return site.source
        if subject == "target":
            return site.target
    elif isinstance(site, NestSite):
        if subject == "parent":
            return site.parent
        if subject == "child":
            return site.child
    elif isinstance(site, ChildrenSite):
        if subject == "parent":
            return site.parent
    return None


def predicate_holds(found: PropertyValue, atom: ConditionAtom) -> bool:
    """Evaluate one predicate against the value found for its subject.

    unknown satisfies nothing; a missing property satisfies only absent.
    """
    if found is ABSENT:
        return atom.predicate == "absent"
    if found is UNKNOWN:
        return False
    predicate = atom.predicate
    if predicate == "equals":
        value = atom.value
        if type(found) is type(value):  # same type means same kind, == is safe
            return found == value
        check_comparable(found, value)  # different kinds are a type error
        return False
    if predicate == "not-equals":
        value = atom.value
        if type(found) is type(value):
            return found != value
        check_comparable(found, value)
        return True
    return predicate == "present"


def _lookup(index: ModelIndex, state: WorldState, site: Site | None,
            atom: ConditionAtom) -> PropertyValue:
    subject = atom.subject
    if subject.startswith("fact:"):
        return state.facts.get(subject[5:], ABSENT)
    if subject.startswith("container:"):
        props = state.container_properties.get(subject[10:])
        if props is None:
            raise UnknownSubject(f"container {subject[10:]!r} is not part of this state")
        return props.get(atom.property, ABSENT)
    if subject == "link":
        if not isinstance(site, LinkSite):
            raise UnknownSubject("atom subject 'link' used outside a link site")
        return index.links[site.link].properties.get(atom.property, ABSENT)
    cid = _container_subject(site, subject) if site is not None else None
    if cid is None:
        raise UnknownSubject(f"atom subject {subject!r} is not bound at this site")
    props = state.container_properties.get(cid)
    if props is None:
        raise UnknownSubject(f"container {cid!r} is not part of this state")
    return props.get(atom.property, ABSENT)


def atom_holds(index: ModelIndex, state: WorldState, site: Site | None,
               atom: ConditionAtom) -> bool:
    # multi-child "child" atoms are universal over the parent's children
    if atom.subject == "child" and isinstance(site, ChildrenSite):
        kids = index.children.get(site.parent, ())
        return all(
            atom_holds(index, state, NestSite(site.parent, kid), atom) for kid in kids
        )
    return predicate_holds(_lookup(index, state, site, atom), atom)


def goal_satisfied(model: Model | ModelIndex, state: WorldState, goal: Goal) -> bool:
    index = _as_index(model)
    return all(atom_holds(index, state, None, atom) for atom in goal.conditions)


# --- enabledness and firing ----------------------------------------------------


def _site_fits(index: ModelIndex, rule: GenericRule | ConventionalRule, site: Site) -> bool:
    """Does this site still exist in the model's topology for this rule?"""
    if isinstance(rule, ConventionalRule):
        return isinstance(site, ConventionalSite)
    if rule.scope == "link" and isinstance(site, LinkSite):
        link = index.links.get(site.link)
        if link is None:
            return False
        ends = {link.a, link.b}
        if {site.source, site.target} != ends or site.source == site.target:
            return False
        if rule.direction == "symmetric":
            return (site.source, site.target) == link.pair()
        return True
    if rule.scope == "parent-child" and isinstance(site, NestSite):
        child = index.containers.get(site.child)
        return child is not None and child.parent == site.parent
    if rule.scope == "multi-child" and isinstance(site, ChildrenSite):
        return bool(index.children.get(site.parent))
    if rule.scope == "sibling" and isinstance(site, SiblingSite):
        kids = index.children.get(site.parent, ())
        return site.source in kids and site.target in kids and site.source != site.target
    return False


def binding_enabled(index: ModelIndex, state: WorldState, trajectory: Trajectory | None,
                    binding: Binding) -> bool:
    rule = index.rule(binding.rule_id)
    if rule is None or not _site_fits(index, rule, binding.site):
        return False
    if (
        not rule.repeatable
        and trajectory is not None
        and trajectory.has_fired(binding.rule_id, binding.site_key())
    ):
        return False
    if (
        isinstance(rule, GenericRule)
        and rule.parent_filter
        and isinstance(binding.site, SiblingSite)
    ):
        parent_site = NestSite(binding.site.parent, "")  # parent-only lookup
        for atom in rule.parent_filter:
            if not atom_holds(index, state, parent_site, atom):
                return False
    return all(atom_holds(index, state, binding.site, atom) for atom in rule.pre)


class _ScanRow(NamedTuple):
    """One precompiled (rule, site) pair with statically resolved atom probes.

    Probes carry (kind, key, atom): kind selects the lookup, key is the
    container id, fact id, static link property dict, or child id tuple.
    Sites come from candidate_sites, so no topology re-check is needed here.
    """

    rule_id: str
    run_once: bool
    binding: Binding
    site_key: str
    probes: tuple[tuple[str, object, ConditionAtom], ...]


def _probe(index: ModelIndex, site: Site, atom: ConditionAtom) -> tuple[str, object, ConditionAtom]:
    subject = atom.subject
    if subject.startswith("fact:"):
        return ("fact", subject[5:], atom)
    if subject.startswith("container:"):
        return ("container", subject[10:], atom)
    if subject == "link":
        if not isinstance(site, LinkSite):
            raise UnknownSubject("atom subject 'link' used outside a link site")
        return ("link", index.links[site.link].properties, atom)
    if subject == "child" and isinstance(site, ChildrenSite):
        return ("children", tuple(index.children.get(site.parent, ())), atom)
    cid = _container_subject(site, subject)
    if cid is None:
        raise UnknownSubject(f"atom subject {subject!r} is not bound at this site")
    return ("container", cid, atom)


def _scan_rows(index: ModelIndex, mode: str | None) -> list[_ScanRow]:
    cache = getattr(index, "_scan_cache", None)
    if cache is None:
        rules: list[GenericRule | ConventionalRule] = list(index.generic_rules.values())
        rules.extend(index.conventional_rules.values())
        rules.sort(key=lambda r: r.id)
        tagged: list[tuple[str, _ScanRow]] = []
        for rule in rules:
            for site in candidate_sites(index, rule):
                probes: list[tuple[str, object, ConditionAtom]] = []
                if (
                    isinstance(rule, GenericRule)
                    and rule.parent_filter
                    and isinstance(site, SiblingSite)
                ):
                    parent_site = NestSite(site.parent, "")  # parent-only lookup
                    for atom in rule.parent_filter:
                        probes.append(_probe(index, parent_site, atom))
                for atom in rule.pre:
                    probes.append(_probe(index, site, atom))
                binding = Binding(rule.id, site)
                row = _ScanRow(rule.id, not rule.repeatable, binding,
                               binding.site_key(), tuple(probes))
                tagged.append((rule.mode, row))
        cache = {
            None: [row for _, row in tagged],
            "automatic": [row for m, row in tagged if m == "automatic"],
            "triggered": [row for m, row in tagged if m == "triggered"],
        }
        index._scan_cache = cache  # type: ignore[attr-defined]
    return cache.get(mode, ())


def _row_enabled(state: WorldState, trajectory: Trajectory | None, row: _ScanRow) -> bool:
    if row.run_once and trajectory is not None and trajectory.has_fired(row.rule_id, row.site_key):
        return False
    containers = state.container_properties
    for kind, key, atom in row.probes:
        if kind == "container":
            props = containers.get(key)
            if props is None:
                raise UnknownSubject(f"container {key!r} is not part of this state")
            found = props.get(atom.property, ABSENT)
        elif kind == "fact":
            found = state.facts.get(key, ABSENT)
        elif kind == "link":
            found = key.get(atom.property, ABSENT)
        else:  # children: universal over the parent's children
            prop = atom.property
            for kid in key:
                props = containers.get(kid)
                if props is None:
                    raise UnknownSubject(f"container {kid!r} is not part of this state")
                if not predicate_holds(props.get(prop, ABSENT), atom):
                    return False
            continue
        if not predicate_holds(found, atom):
            return False
    return True


def enabled_bindings(model: Model | ModelIndex, state: WorldState,
                     trajectory: Trajectory | None = None, *,
                     mode: str | None = None) -> list[Binding]:
    """All currently enabled bindings, sorted by (rule id, site key)."""
    index = _as_index(model)
    out: list[Binding] = []
    for row in _scan_rows(index, mode):
        if _row_enabled(state, trajectory, row):
            out.append(row.binding)
    return out


def _resolve_post(index: ModelIndex, rule: GenericRule | ConventionalRule,
                  site: Site) -> list[BoundAssignment]:
    bound: list[BoundAssignment] = []
    for a in rule.post:
        if a.subject.startswith("fact:"):
            bound.append(BoundAssignment(a.subject, None, a.value))
        elif a.subject.startswith("container:"):
            bound.append(BoundAssignment(a.subject[10:], a.property, a.value))
        elif a.subject == "child" and isinstance(site, ChildrenSite):
            for kid in index.children.get(site.parent, ()):
                bound.append(BoundAssignment(kid, a.property, a.value))
        else:
            cid = _container_subject(site, a.subject)
            if cid is None:
                raise RuleNotEnabled(
                    f"rule {rule.id!r} writes {a.subject!r}, which this site does not bind"
                )
            bound.append(BoundAssignment(cid, a.property, a.value))
    return bound


def fire_rule(model: Model | ModelIndex, state: WorldState, trajectory: Trajectory,
              binding: Binding, *, pre_hash: str | None = None) -> tuple[WorldState, Firing]:
    """Apply one enabled binding; raises RuleNotEnabled without touching anything."""
    index = _as_index(model)
    rule = index.rule(binding.rule_id)
    if rule is None:
        raise RuleNotEnabled(f"no rule {binding.rule_id!r} in this model")
    if not _site_fits(index, rule, binding.site):
        raise RuleNotEnabled(
            f"site {binding.site_key()!r} does not exist for rule {binding.rule_id!r}"
        )
    if not rule.repeatable and trajectory.has_fired(binding.rule_id, binding.site_key()):
        raise RuleNotEnabled(
            f"rule {binding.rule_id!r} already fired at {binding.site_key()!r}"
        )
    if not binding_enabled(index, state, trajectory, binding):
        raise RuleNotEnabled(
            f"preconditions of {binding.rule_id!r} do not hold at {binding.site_key()!r}"
        )
    bound = _resolve_post(index, rule, binding.site)
    new_state = apply_assignments(state, bound)
    diff: list[Symptom] = []
    seen: set[tuple[str, str | None]] = set()
    for b in bound:
        if (b.subject, b.property) in seen:
            continue
        seen.add((b.subject, b.property))
        if b.subject.startswith("fact:"):
            old = state.facts[b.subject[5:]]
            new = new_state.facts[b.subject[5:]]
        else:
            old = state.container_properties[b.subject].get(b.property, ABSENT)
            new = new_state.container_properties[b.subject].get(b.property, ABSENT)
        if not values_equal(old, new):
            diff.append(Symptom(b.subject, b.property, old, new))
    diff.sort(key=Symptom.sort_key)
    firing = Firing(
        binding=binding,
        pre_hash=pre_hash if pre_hash is not None else state_hash(state),
        post_hash=state_hash(new_state),
        diff=tuple(diff),
    )
    trajectory.extend(firing, rule.repeatable)
    return new_state, firing


def apply_conventional_rule(model: Model | ModelIndex, state: WorldState,
                            trajectory: Trajectory, rule_id: str) -> tuple[WorldState, Firing]:
    index = _as_index(model)
    rule = index.conventional_rules.get(rule_id)
    if rule is None:
        raise RuleNotEnabled(f"no conventional rule {rule_id!r} in this model")
    return fire_rule(index, state, trajectory, Binding(rule_id, ConventionalSite()))


# --- automatic closure ---------------------------------------------------------


def closure_budget(index: ModelIndex) -> int:
    auto = [
        r
        for r in list(index.generic_rules.values()) + list(index.conventional_rules.values())
        if r.mode == "automatic"
    ]
    total_sites = sum(len(candidate_sites(index, r)) for r in auto)
    return max(4, len(auto) * total_sites * 4)


def automatic_closure(model: Model | ModelIndex, state: WorldState,
                      trajectory: Trajectory, *, stop=None) -> tuple[WorldState, list[Firing]]:
    """Fire automatic rules in rounds (canonical order) until none is enabled.

    ``stop`` is an internal hook: called after every firing with the new
    state; a true return ends the closure early (used for goal-aware search).
    Raises ClosureBudgetExceeded when the round count passes the budget,
    which signals an oscillating rule set.
    """
    index = _as_index(model)
    budget = closure_budget(index)
    fired: list[Firing] = []
    rounds = 0
    current = state
    while True:
        rounds += 1
        if rounds > budget:
            raise ClosureBudgetExceeded(
                f"automatic rules still firing after {budget} rounds"
            )
        progressed = False
        rows = _scan_rows(index, "automatic")
        snapshot = [row for row in rows if _row_enabled(current, trajectory, row)]
        for row in snapshot:
            if not _row_enabled(current, trajectory, row):
                continue  # an earlier firing this round disabled it
            current, firing = fire_rule(index, current, trajectory, row.binding)
            fired.append(firing)
            progressed = True
            if stop is not None and stop(current):
                return current, fired
        if not progressed:
            return current, fired
