"""Exhaustive attack-path enumeration and path-set analytics.

Depth-first search over world states: at each node every enabled triggered
binding is branched on in canonical order, automatic closure runs after each
firing, and a trajectory ends the moment the goal holds (first hit).  A
trajectory never revisits a (state hash, fired set) node it already passed
through, which both bounds the walk and drops only unproductive loops.
"""
from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field

from .engine import (
    Binding,
    Firing,
    Trajectory,
    automatic_closure,
    enabled_bindings,
    fire_rule,
    firing_from_payload,
    firing_payload,
    goal_satisfied,
)
from .errors import (
    InvalidGoal,
    ModelValidationError,
    ReplayDivergence,
    RuleNotEnabled,
    UnknownSubject,
)
from .ingest import model_hash
from .model import Impact, Model, ModelIndex, validate_model
from .state import WorldState, initial_state, state_hash


@dataclass(frozen=True)
class SearchLimits:
    max_depth: int = 32
    max_paths: int = 100_000
    max_states: int = 1_000_000
    collapse_permutations: bool = True

    def __post_init__(self):
        if self.max_depth < 0 or self.max_paths < 1 or self.max_states < 1:
            raise ValueError("search limits must be positive")

    def payload(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "max_paths": self.max_paths,
            "max_states": self.max_states,
            "collapse_permutations": self.collapse_permutations,
        }


@dataclass(frozen=True)
class SearchStats:
    states_visited: int
    wall_time_s: float  # in-memory only; reports stay byte-deterministic


@dataclass(frozen=True)
class AttackPath:
    goal_id: str
    firings: tuple[Firing, ...]
    terminal_hash: str

    def firing_keys(self) -> tuple[tuple[str, str], ...]:
        return tuple(f.key() for f in self.firings)

    def payload(self) -> dict:
        return {
            "goal": self.goal_id,
            "terminal_hash": self.terminal_hash,
            "firings": [firing_payload(f) for f in self.firings],
        }


@dataclass(frozen=True)
class PathSet:
    model_hash: str
    goal_id: str
    limits: SearchLimits
    paths: tuple[AttackPath, ...]
    truncated: bool
    truncated_by: tuple[str, ...]
    stats: SearchStats

    def payload(self) -> dict:
        return {
            "model_hash": self.model_hash,
            "goal": self.goal_id,
            "limits": self.limits.payload(),
            "paths": [p.payload() for p in self.paths],
            "truncated": self.truncated,
            "truncated_by": list(self.truncated_by),
            "stats": {"states_visited": self.stats.states_visited},
        }


def path_from_payload(data: dict) -> AttackPath:
    return AttackPath(
        goal_id=data["goal"],
        firings=tuple(firing_from_payload(f) for f in data["firings"]),
        terminal_hash=data["terminal_hash"],
    )


def path_set_from_payload(data: dict) -> PathSet:
    limits = SearchLimits(
        max_depth=data["limits"]["max_depth"],
        max_paths=data["limits"]["max_paths"],
        max_states=data["limits"]["max_states"],
        collapse_permutations=data["limits"]["collapse_permutations"],
    )
    return PathSet(
        model_hash=data["model_hash"],
        goal_id=data["goal"],
        limits=limits,
        paths=tuple(path_from_payload(p) for p in data["paths"]),
        truncated=data["truncated"],
        truncated_by=tuple(data["truncated_by"]),
        stats=SearchStats(data["stats"]["states_visited"], 0.0),
    )


def enumerate_paths(model: Model, goal_id: str, limits: SearchLimits | None = None) -> PathSet:
    """Every first-hit trajectory to the goal, canonically ordered.

    Output is a pure function of (model, goal, limits); wall time lives only
    in stats and never reaches serialized reports.
    """
    limits = limits or SearchLimits()
    violations = validate_model(model)
    if violations:
        raise ModelValidationError(violations)
    index = ModelIndex(model)
    goal = index.goals.get(goal_id)
    if goal is None:
        raise InvalidGoal(f"no goal {goal_id!r} in this model")

    t0 = time.perf_counter()
    state0 = initial_state(model, validated=True)
    trajectory = Trajectory(state_hash(state0))
    raw_paths: list[AttackPath] = []
    truncated_by: set[str] = set()
    states_visited = 0

    def hit(s: WorldState) -> bool:
        return goal_satisfied(index, s, goal)

    def record() -> bool:
        raw_paths.append(AttackPath(
            goal_id=goal_id,
            firings=tuple(trajectory.firings),
            terminal_hash=trajectory.current_hash(),
        ))
        if len(raw_paths) >= limits.max_paths:
            truncated_by.add("paths")
            return False
        return True

    def dfs(state: WorldState, depth: int, on_path: set) -> bool:
        nonlocal states_visited
        states_visited += 1
        if states_visited > limits.max_states:
            truncated_by.add("states")
            return False
        bindings = enabled_bindings(index, state, trajectory, mode="triggered")
        if not bindings:
            return True
        if depth >= limits.max_depth:
            truncated_by.add("depth")
            return True
        for binding in bindings:
            mark = len(trajectory)
            new_state, _ = fire_rule(
                index, state, trajectory, binding, pre_hash=trajectory.current_hash()
            )
            keep_going = True
            if hit(new_state):
                keep_going = record()
            else:
                new_state, _ = automatic_closure(index, new_state, trajectory, stop=hit)
                if hit(new_state):
                    keep_going = record()
                else:
                    node = (trajectory.current_hash(), trajectory.fired_snapshot())
                    if node not in on_path:
                        on_path.add(node)
                        keep_going = dfs(new_state, depth + 1, on_path)
                        on_path.discard(node)
            while len(trajectory) > mark:
                trajectory.retract()
            if not keep_going:
                return False
        return True

    if hit(state0):
        record()
    else:
        sys.setrecursionlimit(max(sys.getrecursionlimit(), limits.max_depth * 4 + 500))
        closed, _ = automatic_closure(index, state0, trajectory, stop=hit)
        if hit(closed):
            record()
        else:
            root = (trajectory.current_hash(), trajectory.fired_snapshot())
            dfs(closed, 0, {root})

    if limits.collapse_permutations:
        groups: dict[tuple, AttackPath] = {}
        for p in raw_paths:
            key = (tuple(sorted(p.firing_keys())), p.terminal_hash)
            best = groups.get(key)
            if best is None or p.firing_keys() < best.firing_keys():
                groups[key] = p
        kept = list(groups.values())
    else:
        kept = raw_paths
    kept.sort(key=AttackPath.firing_keys)

    return PathSet(
        model_hash=model_hash(model),
        goal_id=goal_id,
        limits=limits,
        paths=tuple(kept),
        truncated=bool(truncated_by),
        truncated_by=tuple(sorted(truncated_by)),
        stats=SearchStats(states_visited, time.perf_counter() - t0),
    )


def replay_path(model: Model, path: AttackPath) -> WorldState:
    """Re-fire a recorded path step by step; divergence reports the 1-based step."""
    violations = validate_model(model)
    if violations:
        raise ModelValidationError(violations)
    index = ModelIndex(model)
    state = initial_state(model, validated=True)
    trajectory = Trajectory(state_hash(state))
    for step, firing in enumerate(path.firings, 1):
        if firing.pre_hash != trajectory.current_hash():
            raise ReplayDivergence(step, "pre-state hash does not match the recording")
        try:
            state, fired = fire_rule(
                index, state, trajectory, firing.binding,
                pre_hash=trajectory.current_hash(),
            )
        except (RuleNotEnabled, UnknownSubject) as exc:
            raise ReplayDivergence(step, str(exc)) from exc
        if fired.post_hash != firing.post_hash:
            raise ReplayDivergence(step, "firing produced a different state than recorded")
    if trajectory.current_hash() != path.terminal_hash:
        raise ReplayDivergence(len(path.firings) + 1, "terminal state hash mismatch")
    return state


# --- frequency analytics ------------------------------------------------------


@dataclass(frozen=True)
class FrequencyRow:
    subject_id: str
    count: int
    fraction: float
    impact: Impact | None = None

    def payload(self) -> dict:
        row = {"id": self.subject_id, "count": self.count, "fraction": self.fraction}
        if self.impact is not None:
            row["impact"] = {"category": self.impact.category, "severity": self.impact.severity}
        return row


@dataclass(frozen=True)
class FrequencyTable:
    subject_kind: str  # "container" | "rule"
    path_total: int
    rows: tuple[FrequencyRow, ...] = field(default_factory=tuple)

    def payload(self) -> dict:
        return {
            "subject_kind": self.subject_kind,
            "path_total": self.path_total,
            "rows": [r.payload() for r in self.rows],
        }


def bound_containers(index: ModelIndex, binding: Binding) -> set[str]:
    """Container ids a firing touches as bound subjects."""
    site = binding.site
    out: set[str] = set()
    if hasattr(site, "source"):
        out.update((site.source, site.target))
    if hasattr(site, "parent"):
        out.add(site.parent)
        if hasattr(site, "child"):
            out.add(site.child)
        else:
            out.update(index.children.get(site.parent, ()))
    if not out:  # conventional site: the rule names its containers directly
        rule = index.conventional_rules.get(binding.rule_id)
        if rule is not None:
            for atom in rule.pre:
                if atom.subject.startswith("container:"):
                    out.add(atom.subject[10:])
            for a in rule.post:
                if a.subject.startswith("container:"):
                    out.add(a.subject[10:])
    return out


def node_frequency(path_set: PathSet, model: Model) -> FrequencyTable:
    """How many paths touch each container, joined with declared impact."""
    index = ModelIndex(model)
    counts: dict[str, int] = {}
    for path in path_set.paths:
        touched: set[str] = set()
        for firing in path.firings:
            touched |= bound_containers(index, firing.binding)
        for cid in touched:
            counts[cid] = counts.get(cid, 0) + 1
    total = len(path_set.paths)
    rows = [
        FrequencyRow(
            subject_id=cid,
            count=count,
            fraction=count / total,
            impact=index.containers[cid].impact if cid in index.containers else None,
        )
        for cid, count in counts.items()
    ]
    rows.sort(key=lambda r: (-r.count, r.subject_id))
    return FrequencyTable("container", total, tuple(rows))


def rule_frequency(path_set: PathSet) -> FrequencyTable:
    counts: dict[str, int] = {}
    for path in path_set.paths:
        for rule_id in {f.binding.rule_id for f in path.firings}:
            counts[rule_id] = counts.get(rule_id, 0) + 1
    total = len(path_set.paths)
    rows = [
        FrequencyRow(subject_id=rid, count=c, fraction=c / total)
        for rid, c in counts.items()
    ]
    rows.sort(key=lambda r: (-r.count, r.subject_id))
    return FrequencyTable("rule", total, tuple(rows))


def critical_access_filter(path_set: PathSet, model: Model,
                           critical_ids: list[str]) -> PathSet:
    """Keep only paths that touch at least one of the named containers.

    Truncation flags and stats still describe the original enumeration.
    """
    index = ModelIndex(model)
    for cid in critical_ids:
        if cid not in index.containers:
            raise UnknownSubject(f"no container {cid!r} in this model")
    wanted = set(critical_ids)
    kept = tuple(
        p
        for p in path_set.paths
        if any(bound_containers(index, f.binding) & wanted for f in p.firings)
    )
    return PathSet(
        model_hash=path_set.model_hash,
        goal_id=path_set.goal_id,
        limits=path_set.limits,
        paths=kept,
        truncated=path_set.truncated,
        truncated_by=path_set.truncated_by,
        stats=path_set.stats,
    )
