"""Higher-order analyses built on the engine and pathfinder.

Covers attack signatures and matching, what-if model comparison, social
engineering exposure scanning, unknown-property extrapolation, and spot
model extraction.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .engine import (
    Binding,
    Trajectory,
    automatic_closure,
    candidate_sites,
    fire_rule,
)
from .errors import (
    EmptyFocus,
    InvalidEdit,
    ModelValidationError,
    NonUnknownTarget,
    ParseError,
    ReplayDivergence,
    RuleNotEnabled,
    SchemaError,
    UnknownSubject,
)
from .ingest import model_document, model_hash, parse_model_document
from .model import (
    ABSENT,
    Container,
    Link,
    Model,
    ModelIndex,
    PropertyValue,
    UNKNOWN,
    validate_model,
)
from .search import (
    PathSet,
    SearchLimits,
    enumerate_paths,
    node_frequency,
)
from .state import WorldState, diff_states, initial_state, state_hash, values_equal

SymptomTriple = tuple[str, str | None, PropertyValue]


def _encode(value: PropertyValue):
    return None if value is UNKNOWN else value


def _triple_key(t: SymptomTriple) -> tuple:
    return (t[0], t[1] or "", repr(t[2]))


def triple_payload(t: SymptomTriple) -> dict:
    return {"subject": t[0], "property": t[1], "value": _encode(t[2])}


def triples_from_payload(data: list[dict]) -> frozenset[SymptomTriple]:
    out = set()
    for item in data:
        value = item["value"]
        out.add((item["subject"], item["property"], UNKNOWN if value is None else value))
    return frozenset(out)


# --- attack scenarios and signatures -----------------------------------------


@dataclass(frozen=True)
class AttackScenario:
    """A scripted attack: an ordered list of bindings to fire."""

    id: str
    script: tuple[Binding, ...]
    description: str = ""
    checkpoints: tuple[int, ...] | None = None  # defaults to every proper prefix


@dataclass(frozen=True)
class Signature:
    """Symptom set for one outcome of one scenario, with its distinguishing core."""

    scenario_id: str
    outcome: str  # success | partial-at(k) | failed-at(k)
    symptoms: frozenset[SymptomTriple]
    core: frozenset[SymptomTriple] | None = None
    core_method: str | None = None  # exact | greedy

    def payload(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "outcome": self.outcome,
            "symptoms": [triple_payload(t) for t in sorted(self.symptoms, key=_triple_key)],
            "core": (
                None
                if self.core is None
                else [triple_payload(t) for t in sorted(self.core, key=_triple_key)]
            ),
            "core_method": self.core_method,
        }


def signature_from_payload(data: dict) -> Signature:
    return Signature(
        scenario_id=data["scenario"],
        outcome=data["outcome"],
        symptoms=triples_from_payload(data["symptoms"]),
        core=None if data.get("core") is None else triples_from_payload(data["core"]),
        core_method=data.get("core_method"),
    )


def _script_states(index: ModelIndex, model: Model,
                   scenario: AttackScenario) -> list[WorldState]:
    """State after each script step (automatic closure applied throughout)."""
    state = initial_state(model, validated=True)
    trajectory = Trajectory(state_hash(state))
    state, _ = automatic_closure(index, state, trajectory)
    states = [state]
    for step, binding in enumerate(scenario.script, 1):
        try:
            state, _ = fire_rule(index, state, trajectory, binding)
        except RuleNotEnabled as exc:
            raise ReplayDivergence(step, str(exc)) from exc
        state, _ = automatic_closure(index, state, trajectory)
        states.append(state)
    return states


def _new_value_projection(base: WorldState, state: WorldState) -> frozenset[SymptomTriple]:
    return frozenset(
        (s.subject, s.property, s.new) for s in diff_states(base, state)
    )


def _distinguishing_core(
    symptoms: frozenset[SymptomTriple],
    rivals: list[frozenset[SymptomTriple]],
) -> tuple[frozenset[SymptomTriple] | None, str | None]:
    """Smallest symptom subset no other scenario's signature contains.

    Exhaustive up to size 3 (lexicographically first winner), greedy set-cover
    with a minimality prune beyond that.  Empty symptom sets are never unique.
    """
    if not symptoms:
        return None, None

    def unique(subset: frozenset[SymptomTriple]) -> bool:
        return all(not subset <= rival for rival in rivals)

    ordered = sorted(symptoms, key=_triple_key)
    for size in range(1, min(3, len(ordered)) + 1):
        for combo in itertools.combinations(ordered, size):
            if unique(frozenset(combo)):
                return frozenset(combo), "exact"
    if len(ordered) <= 3:
        return None, None

    chosen: list[SymptomTriple] = []
    remaining = list(rivals)
    while remaining:
        best = None
        best_left: list[frozenset[SymptomTriple]] = remaining
        for t in ordered:
            if t in chosen:
                continue
            left = [r for r in remaining if t in r]
            if len(left) < len(best_left):
                best, best_left = t, left
        if best is None:
            return None, None  # some rival contains every symptom we have
        chosen.append(best)
        remaining = best_left
    core = set(chosen)
    for t in sorted(core, key=_triple_key):
        if len(core) > 1 and unique(frozenset(core - {t})):
            core.discard(t)
    return frozenset(core), "greedy"


def generate_signatures(model: Model, scenarios: list[AttackScenario]) -> list[Signature]:
    """Success, per-checkpoint partial, and per-prefix failed signatures.

    Symptoms are the new-value projection of the diff against the starting
    state; distinguishing cores are computed per scenario across the batch.
    """
    violations = validate_model(model)
    if violations:
        raise ModelValidationError(violations)
    index = ModelIndex(model)
    base = initial_state(model, validated=True)

    drafts: list[Signature] = []
    for scenario in scenarios:
        states = _script_states(index, model, scenario)
        n = len(scenario.script)
        sets = [_new_value_projection(base, s) for s in states]
        drafts.append(Signature(scenario.id, "success", sets[n]))
        checkpoints = scenario.checkpoints
        if checkpoints is None:
            checkpoints = tuple(range(1, n))
        for k in checkpoints:
            if not 0 < k <= n:
                raise ReplayDivergence(k, f"checkpoint {k} is outside the script")
            drafts.append(Signature(scenario.id, f"partial-at({k})", sets[k]))
        for k in range(n):
            drafts.append(Signature(scenario.id, f"failed-at({k + 1})", sets[k]))

    out: list[Signature] = []
    for sig in drafts:
        rivals = [d.symptoms for d in drafts if d.scenario_id != sig.scenario_id]
        core, method = _distinguishing_core(sig.symptoms, rivals)
        out.append(Signature(sig.scenario_id, sig.outcome, sig.symptoms, core, method))
    return out


@dataclass(frozen=True)
class MatchResult:
    scenario_id: str
    outcome: str
    similarity: float
    core_hit: bool

    def payload(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "outcome": self.outcome,
            "similarity": self.similarity,
            "core_hit": self.core_hit,
        }


def match_signature(signatures: list[Signature],
                    observed: frozenset[SymptomTriple]) -> list[MatchResult]:
    """Rank signatures by Jaccard similarity against observed symptoms."""
    results = []
    for sig in signatures:
        union = sig.symptoms | observed
        similarity = len(sig.symptoms & observed) / len(union) if union else 0.0
        core_hit = sig.core is not None and sig.core <= observed
        results.append(MatchResult(sig.scenario_id, sig.outcome, similarity, core_hit))
    results.sort(key=lambda r: (-r.similarity, r.scenario_id, r.outcome))
    return results


# --- what-if comparison --------------------------------------------------------


@dataclass(frozen=True)
class ModelEdit:
    op: str
    data: dict


@dataclass(frozen=True)
class ChangeGroup:
    id: str
    edits: tuple[ModelEdit, ...]


def change_groups_from_payload(data: list[dict]) -> list[ChangeGroup]:
    groups = []
    for raw in data:
        edits = tuple(
            ModelEdit(e["op"], {k: v for k, v in e.items() if k != "op"})
            for e in raw["edits"]
        )
        groups.append(ChangeGroup(raw["id"], edits))
    return groups


_RULE_FIELDS = (
    "name", "kind", "scope", "mode", "repeatable", "direction",
    "parent_filter", "pre", "post",
)


def _apply_edit(doc: dict, edit: ModelEdit, group_id: str) -> None:
    data = edit.data

    def remove_from(section: str, entity_id: str) -> bool:
        entries = doc.get(section, [])
        kept = [e for e in entries if e.get("id") != entity_id]
        if len(kept) != len(entries):
            doc[section] = kept
            return True
        return False

    if edit.op == "add_container":
        doc.setdefault("containers", []).append(data["container"])
    elif edit.op == "remove_container":
        if not remove_from("containers", data["id"]):
            raise InvalidEdit(group_id, f"no container {data['id']!r} to remove")
    elif edit.op == "add_link":
        doc.setdefault("links", []).append(data["link"])
    elif edit.op == "remove_link":
        if not remove_from("links", data["id"]):
            raise InvalidEdit(group_id, f"no link {data['id']!r} to remove")
    elif edit.op == "add_rule":
        section = "generic_rules" if "scope" in data["rule"] else "conventional_rules"
        doc.setdefault(section, []).append(data["rule"])
    elif edit.op == "remove_rule":
        if not (remove_from("generic_rules", data["id"])
                or remove_from("conventional_rules", data["id"])):
            raise InvalidEdit(group_id, f"no rule {data['id']!r} to remove")
    elif edit.op == "add_fact":
        doc.setdefault("facts", []).append(data["fact"])
    elif edit.op == "remove_fact":
        if not remove_from("facts", data["id"]):
            raise InvalidEdit(group_id, f"no fact {data['id']!r} to remove")
    elif edit.op == "set_property":
        for entry in doc.get("containers", []):
            if entry["id"] == data["container"]:
                entry.setdefault("properties", {})[data["property"]] = data["value"]
                return
        raise InvalidEdit(group_id, f"no container {data['container']!r}")
    elif edit.op == "set_link_property":
        for entry in doc.get("links", []):
            if entry["id"] == data["link"]:
                entry.setdefault("properties", {})[data["property"]] = data["value"]
                return
        raise InvalidEdit(group_id, f"no link {data['link']!r}")
    elif edit.op == "set_rule_field":
        if data["field"] not in _RULE_FIELDS:
            raise InvalidEdit(group_id, f"rule field {data['field']!r} cannot be edited")
        for section in ("generic_rules", "conventional_rules"):
            for entry in doc.get(section, []):
                if entry["id"] == data["rule"]:
                    entry[data["field"]] = data["value"]
                    return
        raise InvalidEdit(group_id, f"no rule {data['rule']!r}")
    else:
        raise InvalidEdit(group_id, f"unknown edit op {edit.op!r}")


def apply_change_group(model: Model, group: ChangeGroup) -> Model:
    """Apply one group of edits; the result must be a valid model."""
    doc = model_document(model)
    for edit in group.edits:
        _apply_edit(doc, edit, group.id)
    try:
        return parse_model_document(doc)
    except (SchemaError, ParseError, ModelValidationError) as exc:
        raise InvalidEdit(group.id, str(exc)) from exc


def _path_names(path_set: PathSet) -> list[str]:
    return [
        "|".join(f"{rid}@{skey}" for rid, skey in p.firing_keys())
        for p in path_set.paths
    ]


@dataclass(frozen=True)
class StageMetrics:
    stage_id: str
    path_count: int
    min_length: int | None
    mean_length: float | None
    max_length: int | None
    top_nodes: tuple[dict, ...]
    new_paths: tuple[str, ...]
    removed_paths: tuple[str, ...]

    def payload(self) -> dict:
        return {
            "stage": self.stage_id,
            "path_count": self.path_count,
            "min_length": self.min_length,
            "mean_length": self.mean_length,
            "max_length": self.max_length,
            "top_nodes": list(self.top_nodes),
            "new_paths": list(self.new_paths),
            "removed_paths": list(self.removed_paths),
        }


@dataclass(frozen=True)
class MetricsReport:
    base_model_hash: str
    goal_id: str
    stages: tuple[StageMetrics, ...]

    def payload(self) -> dict:
        return {
            "base_model_hash": self.base_model_hash,
            "goal": self.goal_id,
            "stages": [s.payload() for s in self.stages],
        }


def _stage_metrics(stage_id: str, model: Model, path_set: PathSet,
                   previous: list[str] | None, top_k: int) -> tuple[StageMetrics, list[str]]:
    names = _path_names(path_set)
    lengths = [len(p.firings) for p in path_set.paths]
    table = node_frequency(path_set, model)
    prev = set(previous or [])
    cur = set(names)
    metrics = StageMetrics(
        stage_id=stage_id,
        path_count=len(names),
        min_length=min(lengths) if lengths else None,
        mean_length=(sum(lengths) / len(lengths)) if lengths else None,
        max_length=max(lengths) if lengths else None,
        top_nodes=tuple(r.payload() for r in table.rows[:top_k]),
        new_paths=tuple(sorted(cur - prev)) if previous is not None else (),
        removed_paths=tuple(sorted(prev - cur)) if previous is not None else (),
    )
    return metrics, names


def compare_models(model: Model, groups: list[ChangeGroup], goal_id: str,
                   limits: SearchLimits | None = None, top_k: int = 5) -> MetricsReport:
    """Metrics for the base model and each cumulative change stage."""
    base_paths = enumerate_paths(model, goal_id, limits)
    stage, names = _stage_metrics("baseline", model, base_paths, None, top_k)
    stages = [stage]
    current = model
    for group in groups:
        current = apply_change_group(current, group)
        paths = enumerate_paths(current, goal_id, limits)
        stage, names = _stage_metrics(group.id, current, paths, names, top_k)
        stages.append(stage)
    return MetricsReport(model_hash(model), goal_id, tuple(stages))


# --- social engineering scan -----------------------------------------------------


@dataclass(frozen=True)
class SocioEngFinding:
    kind: str  # link-augmentation | property-grant
    detail: dict
    delta_path_count: int
    delta_min_length: int | None

    def payload(self) -> dict:
        return {
            "kind": self.kind,
            "detail": self.detail,
            "delta_path_count": self.delta_path_count,
            "delta_min_length": self.delta_min_length,
        }


def _min_length(path_set: PathSet) -> int | None:
    lengths = [len(p.firings) for p in path_set.paths]
    return min(lengths) if lengths else None


def _with_extra_link(model: Model, a: str, b: str) -> Model:
    link = Link(id=f"socioeng:{a}--{b}", a=a, b=b)
    return Model(
        name=model.name, provenance=model.provenance,
        severity_scale=model.severity_scale, containers=model.containers,
        links=model.links + (link,), generic_rules=model.generic_rules,
        conventional_facts=model.conventional_facts,
        conventional_rules=model.conventional_rules, goals=model.goals,
    )


def _with_property(model: Model, cid: str, prop: str, value: PropertyValue) -> Model:
    containers = []
    for c in model.containers:
        if c.id == cid:
            props = dict(c.properties)
            props[prop] = value
            c = Container(c.id, c.name, c.parent, props, c.impact, c.addresses)
        containers.append(c)
    return Model(
        name=model.name, provenance=model.provenance,
        severity_scale=model.severity_scale, containers=tuple(containers),
        links=model.links, generic_rules=model.generic_rules,
        conventional_facts=model.conventional_facts,
        conventional_rules=model.conventional_rules, goals=model.goals,
    )


def _grant_candidates(model: Model, index: ModelIndex) -> list[tuple[str, str, PropertyValue]]:
    """Concrete (container, property, value) triples rule preconditions want."""
    triples: set[tuple[str, str, PropertyValue]] = set()

    def add(cid: str | None, atom) -> None:
        if cid is not None and atom.property is not None:
            triples.add((cid, atom.property, atom.value))

    for rule in model.generic_rules:
        atoms = list(rule.pre) + list(rule.parent_filter or ())
        for site in candidate_sites(index, rule):
            for atom in atoms:
                if atom.predicate != "equals":
                    continue
                subject = atom.subject
                if subject.startswith("container:"):
                    add(subject[10:], atom)
                elif subject == "link":
                    continue
                elif subject == "child" and hasattr(site, "parent") and not hasattr(site, "child"):
                    for kid in index.children.get(site.parent, ()):
                        add(kid, atom)
                else:
                    cid = None
                    if subject in ("source", "target") and hasattr(site, "source"):
                        cid = getattr(site, subject)
                    elif subject == "parent" and hasattr(site, "parent"):
                        cid = site.parent
                    elif subject == "child" and hasattr(site, "child"):
                        cid = site.child
                    add(cid, atom)
    for rule in model.conventional_rules:
        for atom in rule.pre:
            if atom.predicate == "equals" and atom.subject.startswith("container:"):
                add(atom.subject[10:], atom)
    return sorted(triples, key=lambda t: (t[0], t[1], repr(t[2])))


def find_socioeng_points(model: Model, goal_id: str,
                         limits: SearchLimits | None = None,
                         candidate_filter: set[str] | None = None
                         ) -> list[SocioEngFinding]:
    """What a well-placed favor or credential would change.

    Phase 1 hypothesizes a link between each unlinked container pair; phase 2
    grants each unsatisfied rule-precondition property.  Each hypothesis is
    applied to a fresh copy of the model, and both improvements and
    regressions are reported.
    """
    violations = validate_model(model)
    if violations:
        raise ModelValidationError(violations)
    index = ModelIndex(model)
    base = enumerate_paths(model, goal_id, limits)
    base_count = len(base.paths)
    base_min = _min_length(base)
    findings: list[SocioEngFinding] = []

    def deltas(hyp_model: Model) -> tuple[int, int | None]:
        hyp = enumerate_paths(hyp_model, goal_id, limits)
        count_delta = len(hyp.paths) - base_count
        hyp_min = _min_length(hyp)
        length_delta = (
            hyp_min - base_min if hyp_min is not None and base_min is not None else None
        )
        return count_delta, length_delta

    linked = {l.pair() for l in model.links}
    ids = sorted(index.containers)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if (a, b) in linked:
                continue
            if candidate_filter is not None and (
                a not in candidate_filter or b not in candidate_filter
            ):
                continue
            count_delta, length_delta = deltas(_with_extra_link(model, a, b))
            if count_delta != 0 or (length_delta or 0) != 0:
                findings.append(SocioEngFinding(
                    kind="link-augmentation",
                    detail={"a": a, "b": b},
                    delta_path_count=count_delta,
                    delta_min_length=length_delta,
                ))

    start = initial_state(model, validated=True)
    for cid, prop, value in _grant_candidates(model, index):
        if candidate_filter is not None and cid not in candidate_filter:
            continue
        found = start.container_properties[cid].get(prop, ABSENT)
        if values_equal(found, value):
            continue  # already holds in the starting state
        count_delta, length_delta = deltas(_with_property(model, cid, prop, value))
        if count_delta != 0 or (length_delta or 0) != 0:
            findings.append(SocioEngFinding(
                kind="property-grant",
                detail={"container": cid, "property": prop, "value": _encode(value)},
                delta_path_count=count_delta,
                delta_min_length=length_delta,
            ))

    findings.sort(key=lambda f: (
        -f.delta_path_count, f.kind, sorted(map(str, f.detail.items()))
    ))
    return findings


# --- extrapolation ------------------------------------------------------------


def extrapolate_variants(model: Model, domains: dict[tuple[str, str], list[PropertyValue]],
                         cap: int | None = None) -> tuple[tuple[Model, ...], bool]:
    """Instantiate every combination of candidate values for unknown properties.

    Every targeted property must currently be unknown; the cross product is
    generated in canonical target order and truncated at ``cap``.
    """
    violations = validate_model(model)
    if violations:
        raise ModelValidationError(violations)
    index = ModelIndex(model)
    targets = sorted(domains, key=lambda t: (t[0], t[1]))
    for cid, prop in targets:
        container = index.containers.get(cid)
        if container is None:
            raise UnknownSubject(f"no container {cid!r} in this model")
        if container.properties.get(prop, ABSENT) is not UNKNOWN:
            raise NonUnknownTarget(f"{cid}.{prop} is not unknown; refusing to overwrite")
        if not domains[(cid, prop)]:
            raise NonUnknownTarget(f"{cid}.{prop} has an empty candidate domain")

    variants: list[Model] = []
    truncated = False
    value_lists = [domains[t] for t in targets]
    for combo in itertools.product(*value_lists):
        if cap is not None and len(variants) >= cap:
            truncated = True
            break
        current = model
        for (cid, prop), value in zip(targets, combo):
            current = _with_property(current, cid, prop, value)
        n = len(variants) + 1
        variant = Model(
            name=f"{model.name}#ext{n:04d}", provenance="extrapolated",
            severity_scale=current.severity_scale, containers=current.containers,
            links=current.links, generic_rules=current.generic_rules,
            conventional_facts=current.conventional_facts,
            conventional_rules=current.conventional_rules, goals=current.goals,
        )
        bad = validate_model(variant)
        if bad:
            raise ModelValidationError(bad)
        variants.append(variant)
    return tuple(variants), truncated


@dataclass(frozen=True)
class SensitivityReport:
    rows: tuple[tuple[str, int], ...]  # (variant name, path count)
    spread: int
    sensitive: bool

    def payload(self) -> dict:
        return {
            "rows": [{"variant": name, "path_count": count} for name, count in self.rows],
            "spread": self.spread,
            "sensitive": self.sensitive,
        }


def sensitivity_report(variants: list[Model], goal_id: str,
                       limits: SearchLimits | None = None) -> SensitivityReport:
    """Path counts across variants; any spread marks the unknowns as sensitive."""
    rows = []
    for variant in variants:
        paths = enumerate_paths(variant, goal_id, limits)
        rows.append((variant.name, len(paths.paths)))
    counts = [c for _, c in rows]
    spread = (max(counts) - min(counts)) if counts else 0
    return SensitivityReport(tuple(rows), spread, spread > 0)


# --- spot model extraction -------------------------------------------------------


def extract_spot_model(model: Model, focus: list[str],
                       boundary_defaults: dict[str, PropertyValue] | None = None) -> Model:
    """Cut out the focus containers (with ancestors and descendants).

    Links to removed containers are re-terminated at fresh boundary stubs so
    every retained attack surface stays reachable in the drill-down model.
    """
    violations = validate_model(model)
    if violations:
        raise ModelValidationError(violations)
    if not focus:
        raise EmptyFocus("spot extraction needs at least one focus container")
    index = ModelIndex(model)
    for cid in focus:
        if cid not in index.containers:
            raise UnknownSubject(f"no container {cid!r} in this model")

    keep: set[str] = set()
    for cid in focus:
        keep.add(cid)
        keep.update(index.ancestors(cid))
        keep.update(index.descendants(cid))

    boundary: dict[str, Container] = {}

    def boundary_for(removed_id: str) -> str:
        bid = f"boundary:{removed_id}"
        if bid not in boundary:
            original = index.containers[removed_id]
            boundary[bid] = Container(
                id=bid,
                name=f"boundary ({original.name})",
                properties=dict(boundary_defaults or {}),
            )
        return bid

    links: list[Link] = []
    for link in model.links:
        a_in, b_in = link.a in keep, link.b in keep
        if a_in and b_in:
            links.append(link)
        elif a_in or b_in:
            a = link.a if a_in else boundary_for(link.a)
            b = link.b if b_in else boundary_for(link.b)
            links.append(Link(link.id, a, b, dict(link.properties)))

    containers = [c for c in model.containers if c.id in keep]
    containers.extend(boundary[b] for b in sorted(boundary))

    def refs_survive(atoms, assignments) -> bool:
        for atom in atoms:
            if atom.subject.startswith("container:") and atom.subject[10:] not in keep:
                return False
        for a in assignments:
            if a.subject.startswith("container:") and a.subject[10:] not in keep:
                return False
        return True

    conventional_rules = tuple(
        r for r in model.conventional_rules if refs_survive(r.pre, r.post)
    )
    goals = tuple(g for g in model.goals if refs_survive(g.conditions, ()))

    spot = Model(
        name=model.name,
        provenance="spot",
        severity_scale=model.severity_scale,
        containers=tuple(containers),
        links=tuple(links),
        generic_rules=model.generic_rules,
        conventional_facts=model.conventional_facts,
        conventional_rules=conventional_rules,
        goals=goals,
    )
    bad = validate_model(spot)
    if bad:
        raise ModelValidationError(bad)
    return spot


def spot_document(model: Model, focus: list[str],
                  boundary_defaults: dict[str, PropertyValue] | None = None) -> dict:
    return model_document(extract_spot_model(model, focus, boundary_defaults))
