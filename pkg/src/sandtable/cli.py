"""Command line front end.

Every reporting command writes one JSON envelope: a manifest naming the
command, the input files with their digests, and a digest of the payload,
followed by the payload itself.  Identical inputs produce identical bytes;
wall-clock timings never enter the report (use --timings for a stderr note).
"""
from __future__ import annotations

import argparse
import json
import sys
import time

from . import __version__
from .analysis import (
    AttackScenario,
    change_groups_from_payload,
    compare_models,
    extract_spot_model,
    extrapolate_variants,
    find_socioeng_points,
    generate_signatures,
    match_signature,
    sensitivity_report,
    signature_from_payload,
    triples_from_payload,
)
from .engine import binding_from_payload
from .errors import ModelValidationError, ParseError, SandtableError, SchemaError
from .ingest import (
    apply_discrepancies,
    detect_discrepancies,
    model_document,
    model_hash,
    parse_model_document,
    parse_observations,
    serialize_model,
)
from .model import canonical_json, sha256_hex, validate_model
from .search import (
    SearchLimits,
    critical_access_filter,
    enumerate_paths,
    node_frequency,
    path_set_from_payload,
    rule_frequency,
)


class InputError(Exception):
    """A named input could not be read or understood; exits with code 3."""


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc


def _load_json(path: str):
    raw = _read_bytes(path)
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _load_model(path: str, *, validate: bool = True):
    raw = _read_bytes(path)
    try:
        return parse_model_document(raw, validate=validate)
    except ParseError as exc:
        raise InputError(f"{path}: {exc.location}: {exc.args[0] if exc.args else exc}") from exc
    except SchemaError as exc:
        raise InputError(f"{path}: {exc.path}: {exc}") from exc
    except ModelValidationError as exc:
        lines = "\n".join(f"  {v}" for v in exc.violations)
        raise InputError(f"{path}: the model does not validate:\n{lines}") from exc


def _payload_of(report) -> dict:
    """Accept either a full envelope or a bare payload from an earlier run."""
    if isinstance(report, dict) and "payload" in report and "manifest" in report:
        return report["payload"]
    if isinstance(report, dict):
        return report
    raise InputError("expected a JSON object report")


def _parse_limits(text: str | None) -> SearchLimits:
    if not text:
        return SearchLimits()
    values: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, number = part.partition("=")
        key = {"depth": "max_depth", "paths": "max_paths", "states": "max_states"}.get(
            name.strip()
        )
        if key is None or not number.strip().isdigit():
            raise InputError(
                f"bad --limits entry {part!r}; use depth=N,paths=N,states=N"
            )
        values[key] = int(number)
    try:
        return SearchLimits(**values)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _goal_id(model, asked: str | None) -> str:
    if asked:
        return asked
    if len(model.goals) == 1:
        return model.goals[0].id
    ids = ", ".join(g.id for g in model.goals) or "none declared"
    raise InputError(f"--goal is required when the model has several goals ({ids})")


def _csv(text: str | None) -> list[str]:
    if not text:
        return []
    return [part.strip() for part in text.split(",") if part.strip()]


def _envelope(command: str, inputs: dict[str, tuple[str, bytes]], payload: dict,
              limits: SearchLimits | None = None) -> dict:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "inputs": {
            label: {"path": path, "sha256": sha256_hex(raw)}
            for label, (path, raw) in sorted(inputs.items())
        },
        "payload_digest": sha256_hex(canonical_json(payload)),
    }
    if limits is not None:
        manifest["limits"] = limits.payload()
    return {"manifest": manifest, "payload": payload}


def _emit(args, envelope: dict, table: str | None = None) -> None:
    text = json.dumps(envelope, sort_keys=True, indent=2) + "\n"
    out = getattr(args, "out", None)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if getattr(args, "format", "json") == "table":
        sys.stdout.write((table or "") + "\n")
    elif not out:
        sys.stdout.write(text)


def _inputs(**named: str) -> dict[str, tuple[str, bytes]]:
    return {label: (path, _read_bytes(path)) for label, path in named.items() if path}


# --- commands -------------------------------------------------------------------


def cmd_validate(args) -> int:
    raw = _read_bytes(args.model)
    try:
        model = parse_model_document(raw, validate=False)
    except ParseError as exc:
        print(f"{args.model}: {exc.location}: {exc}", file=sys.stderr)
        return 3
    except SchemaError as exc:
        print(f"{args.model}: {exc.path}: {exc}", file=sys.stderr)
        return 3
    violations = validate_model(model)
    if violations:
        for violation in violations:
            print(f"{args.model}: {violation}", file=sys.stderr)
        return 3
    digest = model_hash(model)
    payload = {
        "valid": True,
        "model_hash": digest,
        "name": model.name,
        "containers": len(model.containers),
        "links": len(model.links),
        "rules": len(model.generic_rules) + len(model.conventional_rules),
        "goals": len(model.goals),
    }
    envelope = _envelope("validate", {"model": (args.model, raw)}, payload)
    _emit(args, envelope, table=f"ok {model.name} {digest}")
    return 0


def _render_paths(payload: dict) -> str:
    lines = [
        f"goal {payload['goal']}: {len(payload['paths'])} paths"
        + (f" (truncated by {', '.join(payload['truncated_by'])})" if payload["truncated"] else "")
    ]
    for n, path in enumerate(payload["paths"], 1):
        steps = " | ".join(
            f"{f['binding']['rule']}@{_site_text(f['binding']['site'])}"
            for f in path["firings"]
        )
        lines.append(f"  {n}. {steps or '(already satisfied)'}")
    return "\n".join(lines)


def _site_text(site: dict) -> str:
    kind = site["type"]
    if kind == "link":
        return f"link:{site['link']}:{site['source']}->{site['target']}"
    if kind == "parent-child":
        return f"nest:{site['parent']}/{site['child']}"
    if kind == "multi-child":
        return f"children:{site['parent']}"
    if kind == "sibling":
        return f"sib:{site['parent']}:{site['source']}->{site['target']}"
    return "conventional"


def cmd_enumerate(args) -> int:
    model = _load_model(args.model)
    limits = _parse_limits(args.limits)
    if args.collapse:
        limits = SearchLimits(
            limits.max_depth, limits.max_paths, limits.max_states,
            args.collapse == "on",
        )
    started = time.monotonic()
    path_set = enumerate_paths(model, _goal_id(model, args.goal), limits)
    if args.timings:
        print(f"enumerated in {time.monotonic() - started:.2f}s", file=sys.stderr)
    payload = path_set.payload()
    payload["document"] = model_document(model)
    envelope = _envelope(
        "enumerate", _inputs(model=args.model), payload, limits=limits
    )
    _emit(args, envelope, table=_render_paths(payload))
    return 0


def cmd_freq(args) -> int:
    report = _payload_of(_load_json(args.paths))
    if "document" not in report:
        raise InputError(f"{args.paths}: this report does not embed a model document")
    path_set = path_set_from_payload(report)
    model = parse_model_document(report["document"])
    if args.critical:
        path_set = critical_access_filter(path_set, model, _csv(args.critical))
    table = node_frequency(path_set, model) if args.by == "nodes" else rule_frequency(path_set)
    payload = {"table": table.payload(), "goal": path_set.goal_id}
    envelope = _envelope("freq", _inputs(paths=args.paths), payload)
    rows = [
        f"{r['id']}  count={r['count']}  fraction={r['fraction']:.3f}"
        + (f"  impact={r['impact']['severity']}" if "impact" in r else "")
        for r in payload["table"]["rows"]
    ]
    header = f"{args.by} over {payload['table']['path_total']} paths"
    _emit(args, envelope, table="\n".join([header] + rows))
    return 0


def cmd_signatures(args) -> int:
    model = _load_model(args.model)
    spec = _load_json(args.scenarios)
    raw_scenarios = spec.get("scenarios")
    if not isinstance(raw_scenarios, list) or not raw_scenarios:
        raise InputError(f"{args.scenarios}: expected a non-empty \"scenarios\" list")
    scenarios = []
    for raw in raw_scenarios:
        try:
            scenarios.append(AttackScenario(
                id=raw["id"],
                script=tuple(binding_from_payload(b) for b in raw["script"]),
                description=raw.get("description", ""),
                checkpoints=(
                    tuple(raw["checkpoints"]) if raw.get("checkpoints") is not None else None
                ),
            ))
        except (KeyError, TypeError) as exc:
            raise InputError(f"{args.scenarios}: malformed scenario: {exc}") from exc
    signatures = generate_signatures(model, scenarios)
    payload = {
        "model_hash": model_hash(model),
        "signatures": [s.payload() for s in signatures],
    }
    envelope = _envelope(
        "signatures", _inputs(model=args.model, scenarios=args.scenarios), payload
    )
    lines = [
        f"{s['scenario']} {s['outcome']}: {len(s['symptoms'])} symptoms, "
        + (f"core of {len(s['core'])} ({s['core_method']})" if s["core"] else "no unique core")
        for s in payload["signatures"]
    ]
    _emit(args, envelope, table="\n".join(lines))
    return 0


def cmd_match(args) -> int:
    sig_payload = _payload_of(_load_json(args.signatures))
    if "signatures" not in sig_payload:
        raise InputError(f"{args.signatures}: expected a signatures report")
    signatures = [signature_from_payload(s) for s in sig_payload["signatures"]]
    observed_doc = _load_json(args.observed)
    if "symptoms" not in observed_doc:
        raise InputError(f"{args.observed}: expected a \"symptoms\" list")
    observed = triples_from_payload(observed_doc["symptoms"])
    matches = match_signature(signatures, observed)
    payload = {"matches": [m.payload() for m in matches]}
    envelope = _envelope(
        "match", _inputs(signatures=args.signatures, observed=args.observed), payload
    )
    lines = [
        f"{m['scenario']} {m['outcome']}  similarity={m['similarity']:.3f}"
        + ("  core-hit" if m["core_hit"] else "")
        for m in payload["matches"]
    ]
    _emit(args, envelope, table="\n".join(lines))
    return 0


def cmd_diff(args) -> int:
    model = _load_model(args.model)
    changes = _load_json(args.changes)
    if "groups" not in changes or not isinstance(changes["groups"], list):
        raise InputError(f"{args.changes}: expected a \"groups\" list")
    try:
        groups = change_groups_from_payload(changes["groups"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"{args.changes}: malformed change group: {exc}") from exc
    limits = _parse_limits(args.limits)
    report = compare_models(model, groups, _goal_id(model, args.goal), limits, args.top)
    payload = report.payload()
    envelope = _envelope(
        "diff", _inputs(model=args.model, changes=args.changes), payload, limits=limits
    )
    lines = []
    for stage in payload["stages"]:
        lengths = (
            f"min={stage['min_length']} mean={stage['mean_length']:.2f} max={stage['max_length']}"
            if stage["path_count"]
            else "no paths"
        )
        lines.append(f"{stage['stage']}: {stage['path_count']} paths ({lengths})")
        if stage["new_paths"]:
            lines.append(f"  +{len(stage['new_paths'])} new")
        if stage["removed_paths"]:
            lines.append(f"  -{len(stage['removed_paths'])} removed")
    _emit(args, envelope, table="\n".join(lines))
    return 0


def cmd_socioeng(args) -> int:
    model = _load_model(args.model)
    limits = _parse_limits(args.limits)
    candidates = set(_csv(args.candidates)) or None
    findings = find_socioeng_points(
        model, _goal_id(model, args.goal), limits, candidates
    )
    payload = {"findings": [f.payload() for f in findings]}
    envelope = _envelope(
        "socioeng", _inputs(model=args.model), payload, limits=limits
    )
    lines = []
    for f in payload["findings"]:
        delta = f["delta_path_count"]
        where = (
            f"link {f['detail']['a']} -- {f['detail']['b']}"
            if f["kind"] == "link-augmentation"
            else f"grant {f['detail']['container']}.{f['detail']['property']}"
                 f"={json.dumps(f['detail']['value'])}"
        )
        lines.append(f"{delta:+d} paths  {where}")
    _emit(args, envelope, table="\n".join(lines) or "no findings")
    return 0


def cmd_ingest(args) -> int:
    model = _load_model(args.model)
    raw_obs = _read_bytes(args.observations)
    batch = parse_observations(raw_obs.decode("utf-8"))
    report = detect_discrepancies(model, list(batch.records))
    payload = {
        "report": report.payload(),
        "diagnostics": [{"line": d.line, "message": d.message} for d in batch.diagnostics],
        "policy": args.policy,
    }
    if args.policy:
        if not args.out_model:
            raise InputError("--policy needs --out-model to receive the revised model")
        revised = apply_discrepancies(model, report, args.policy)
        with open(args.out_model, "wb") as fh:
            fh.write(serialize_model(revised))
        payload["out_model_hash"] = model_hash(revised)
    envelope = _envelope(
        "ingest", _inputs(model=args.model, observations=args.observations), payload
    )
    lines = [
        f"{d['kind']}  {d['subject']}  {d['detail']}"
        for d in payload["report"]["discrepancies"]
    ]
    if payload["diagnostics"]:
        lines.append(f"({len(payload['diagnostics'])} observation lines were unusable)")
    _emit(args, envelope, table="\n".join(lines) or "no discrepancies")
    if args.fail_on_discrepancy and report.discrepancies:
        return 1
    return 0


def cmd_extrapolate(args) -> int:
    model = _load_model(args.model)
    spec = _load_json(args.domains)
    raw_domains = spec.get("domains")
    if not isinstance(raw_domains, list) or not raw_domains:
        raise InputError(f"{args.domains}: expected a non-empty \"domains\" list")
    domains = {}
    for raw in raw_domains:
        try:
            domains[(raw["container"], raw["property"])] = list(raw["values"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"{args.domains}: malformed domain entry: {exc}") from exc
    variants, truncated = extrapolate_variants(model, domains, cap=args.cap)
    payload = {
        "truncated": truncated,
        "variants": [
            {"name": v.name, "document": model_document(v)} for v in variants
        ],
    }
    lines = [f"{len(variants)} variants" + (" (truncated)" if truncated else "")]
    if args.goal:
        limits = _parse_limits(args.limits)
        sensitivity = sensitivity_report(list(variants), args.goal, limits)
        payload["sensitivity"] = sensitivity.payload()
        for row in payload["sensitivity"]["rows"]:
            lines.append(f"  {row['variant']}: {row['path_count']} paths")
        lines.append(
            f"spread={payload['sensitivity']['spread']} "
            + ("sensitive" if payload["sensitivity"]["sensitive"] else "insensitive")
        )
    envelope = _envelope(
        "extrapolate", _inputs(model=args.model, domains=args.domains), payload
    )
    _emit(args, envelope, table="\n".join(lines))
    return 0


def cmd_spot(args) -> int:
    model = _load_model(args.model)
    focus = _csv(args.focus)
    boundary: dict = {}
    for part in _csv(args.boundary):
        name, sep, raw = part.partition("=")
        if not sep or not name:
            raise InputError(f"bad --boundary entry {part!r}; use name=value")
        try:
            boundary[name] = json.loads(raw)
        except json.JSONDecodeError:
            boundary[name] = raw
    spot = extract_spot_model(model, focus, boundary or None)
    data = serialize_model(spot)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.storage)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sandtable",
        description="Attack-path modeling: validate, enumerate, analyze, exercise.",
    )
    parser.add_argument("--version", action="version", version=f"sandtable {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, goal=False, limits=False):
        p.add_argument("--format", choices=("json", "table"), default="json")
        p.add_argument("--out", help="write the JSON report to this file")
        if goal:
            p.add_argument("--goal", help="goal id (defaults to the model's only goal)")
        if limits:
            p.add_argument("--limits", help="depth=N,paths=N,states=N")

    p = sub.add_parser("validate", help="check a model document")
    p.add_argument("--model", required=True)
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("enumerate", help="enumerate attack paths to a goal")
    p.add_argument("--model", required=True)
    common(p, goal=True, limits=True)
    p.add_argument("--collapse", choices=("on", "off"),
                   help="collapse firing-set permutations (default on)")
    p.add_argument("--timings", action="store_true",
                   help="report wall time on stderr")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("freq", help="frequency table over an enumeration report")
    p.add_argument("--paths", required=True, help="report produced by enumerate")
    p.add_argument("--by", choices=("nodes", "rules"), default="nodes")
    p.add_argument("--critical", help="only count paths touching these containers")
    common(p)
    p.set_defaults(func=cmd_freq)

    p = sub.add_parser("signatures", help="derive attack signatures from scenario scripts")
    p.add_argument("--model", required=True)
    p.add_argument("--scenarios", required=True)
    common(p)
    p.set_defaults(func=cmd_signatures)

    p = sub.add_parser("match", help="rank signatures against observed symptoms")
    p.add_argument("--signatures", required=True, help="report produced by signatures")
    p.add_argument("--observed", required=True)
    common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("diff", help="compare path metrics across model changes")
    p.add_argument("--model", required=True)
    p.add_argument("--changes", required=True)
    p.add_argument("--top", type=int, default=5, help="top container rows per stage")
    common(p, goal=True, limits=True)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("socioeng", help="scan for social engineering exposure")
    p.add_argument("--model", required=True)
    p.add_argument("--candidates", help="restrict hypotheses to these containers")
    common(p, goal=True, limits=True)
    p.set_defaults(func=cmd_socioeng)

    p = sub.add_parser("ingest", help="reconcile scanner observations with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--observations", required=True, help="JSONL scan records")
    p.add_argument("--policy", choices=("annotate", "patch"))
    p.add_argument("--out-model", help="write the revised model document here")
    p.add_argument("--fail-on-discrepancy", action="store_true")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extrapolate", help="instantiate unknown properties over domains")
    p.add_argument("--model", required=True)
    p.add_argument("--domains", required=True)
    p.add_argument("--cap", type=int, help="maximum number of variants")
    common(p, goal=True, limits=True)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("spot", help="extract a focused drill-down model")
    p.add_argument("--model", required=True)
    p.add_argument("--focus", required=True, help="comma separated container ids")
    p.add_argument("--boundary", help="boundary stub properties, name=value pairs")
    p.add_argument("--out", help="write the model document to this file")
    p.set_defaults(func=cmd_spot)

    p = sub.add_parser("serve", help="run the war-game session service")
    p.add_argument("--storage", default="./sessions",
                   help="directory for session journals")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SandtableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
