"""Command line behavior: exit codes, envelopes, and report pipelines."""
from __future__ import annotations

import json

import pytest

import fixtures
from sandtable.cli import main
from sandtable.ingest import (
    model_hash,
    parse_model_document,
    serialize_model,
    serialize_observations,
    synthesize_observations,
)


def write_model(tmp_path, doc, name="model.json") -> str:
    path = tmp_path / name
    path.write_bytes(serialize_model(fixtures.build(doc)))
    return str(path)


def write_json(tmp_path, data, name) -> str:
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def run_json(capsys, argv):
    code, out, err = run(capsys, argv)
    assert code == 0, err
    return json.loads(out)


def lockbox_doc() -> dict:
    return {
        "model": {"name": "lockbox"},
        "containers": [
            {"id": "thief", "name": "Thief", "properties": {"tools": True}},
            {"id": "box", "name": "Box",
             "properties": {"locked": None, "opened": False}},
        ],
        "links": [{"id": "l-thief-box", "a": "thief", "b": "box"}],
        "generic_rules": [
            {"id": "pry-open", "name": "Pry it open", "scope": "link",
             "pre": [{"subject": "source", "property": "tools", "equals": True},
                     {"subject": "target", "property": "locked", "equals": False}],
             "post": [{"subject": "target", "property": "opened", "value": True}]},
        ],
        "goals": [{"id": "opened",
                   "conditions": [{"subject": "container:box", "property": "opened",
                                   "equals": True}]}],
    }


# --- validate -------------------------------------------------------------------


def test_validate_reports_model_stats(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    envelope = run_json(capsys, ["validate", "--model", path])
    assert envelope["manifest"]["command"] == "validate"
    payload = envelope["payload"]
    assert payload["valid"] is True
    assert payload["model_hash"] == model_hash(fixtures.build(fixtures.router_doc()))
    assert (payload["containers"], payload["links"], payload["rules"],
            payload["goals"]) == (3, 2, 4, 1)

    code, out, err = run(capsys, ["validate", "--model", path, "--format", "table"])
    assert code == 0
    assert out.startswith("ok router ")


def test_validate_rejects_referential_violations(tmp_path, capsys):
    doc = fixtures.router_doc()
    doc["links"][0]["b"] = "ghost"
    path = write_json(tmp_path, doc, "broken.json")
    code, out, err = run(capsys, ["validate", "--model", path])
    assert code == 3
    assert out == ""
    assert "ghost" in err


def test_validate_reports_parse_errors(tmp_path, capsys):
    path = tmp_path / "junk.json"
    path.write_text("{nope")
    code, out, err = run(capsys, ["validate", "--model", str(path)])
    assert code == 3
    assert "junk.json" in err


def test_missing_input_files_exit_3(tmp_path, capsys):
    code, out, err = run(capsys, ["validate", "--model", str(tmp_path / "absent.json")])
    assert code == 3
    assert "absent.json" in err


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["enumerate"])  # --model is required
    assert excinfo.value.code == 2
    with pytest.raises(SystemExit) as excinfo:
        main(["no-such-command"])
    assert excinfo.value.code == 2


def test_version_banner(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert capsys.readouterr().out.startswith("sandtable ")


# --- enumerate ------------------------------------------------------------------


def test_enumerate_output_is_byte_deterministic(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    code, first, _ = run(capsys, ["enumerate", "--model", path])
    assert code == 0
    code, second, err = run(capsys, ["enumerate", "--model", path, "--timings"])
    assert code == 0
    assert first == second  # wall time goes to stderr, never the report
    assert "enumerated in" in err

    envelope = json.loads(first)
    payload = envelope["payload"]
    assert payload["goal"] == "compromise-right"
    assert payload["truncated"] is False
    assert len(payload["paths"]) == 1
    assert [f["binding"]["rule"] for f in payload["paths"][0]["firings"]] == [
        "gain-user-access", "escalate-privilege", "enable-forwarding", "attack-right",
    ]
    assert payload["document"]["model"]["name"] == "router"
    assert envelope["manifest"]["limits"]["collapse_permutations"] is True


def test_enumerate_table_lists_the_chain(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    code, out, _ = run(capsys, ["enumerate", "--model", path, "--format", "table"])
    assert code == 0
    assert out.splitlines()[0] == "goal compromise-right: 1 paths"
    assert "gain-user-access@link:l-left-router:left-computer->router" in out


def test_enumerate_depth_limit_truncates_honestly(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    payload = run_json(capsys, ["enumerate", "--model", path,
                                "--limits", "depth=2"])["payload"]
    assert payload["paths"] == []
    assert payload["truncated"] is True
    assert "depth" in payload["truncated_by"]


def test_bad_limit_strings_exit_3(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    for limits in ("depth=x", "bogus=3"):
        code, out, err = run(capsys, ["enumerate", "--model", path,
                                      "--limits", limits])
        assert code == 3, limits
        assert "--limits" in err or "entry" in err


def test_goal_disambiguation(tmp_path, capsys):
    doc = fixtures.router_doc()
    doc["goals"].append({"id": "second", "conditions": [
        {"subject": "container:router", "property": "admin_access", "equals": True},
    ]})
    path = write_json(tmp_path, doc, "twogoals.json")
    code, out, err = run(capsys, ["enumerate", "--model", path])
    assert code == 3
    assert "--goal" in err
    envelope = run_json(capsys, ["enumerate", "--model", path, "--goal", "second"])
    assert envelope["payload"]["goal"] == "second"
    code, out, err = run(capsys, ["enumerate", "--model", path, "--goal", "ghost"])
    assert code == 3


def test_out_writes_the_same_bytes_silently(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    code, stdout_copy, _ = run(capsys, ["enumerate", "--model", path])
    out_file = tmp_path / "report.json"
    code, out, _ = run(capsys, ["enumerate", "--model", path, "--out", str(out_file)])
    assert code == 0
    assert out == ""
    assert out_file.read_text() == stdout_copy


# --- freq -----------------------------------------------------------------------


def test_freq_over_an_enumeration_report(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    report = tmp_path / "paths.json"
    run(capsys, ["enumerate", "--model", path, "--out", str(report)])

    payload = run_json(capsys, ["freq", "--paths", str(report)])["payload"]
    table = payload["table"]
    assert table["path_total"] == 1
    assert {(r["id"], r["count"], r["fraction"]) for r in table["rows"]} == {
        ("left-computer", 1, 1.0), ("router", 1, 1.0), ("right-computer", 1, 1.0),
    }
    by_id = {r["id"]: r for r in table["rows"]}
    assert by_id["router"]["impact"] == {"category": "availability",
                                         "severity": "medium"}
    assert "impact" not in by_id["left-computer"]

    rules = run_json(capsys, ["freq", "--paths", str(report), "--by", "rules"])
    assert {r["id"] for r in rules["payload"]["table"]["rows"]} == {
        "gain-user-access", "escalate-privilege", "enable-forwarding", "attack-right",
    }

    kept = run_json(capsys, ["freq", "--paths", str(report),
                             "--critical", "right-computer"])
    assert kept["payload"]["table"]["path_total"] == 1

    code, out, err = run(capsys, ["freq", "--paths", str(report),
                                  "--critical", "ghost"])
    assert code == 3

    bare = write_json(tmp_path, {"goal": "g"}, "bare.json")
    code, out, err = run(capsys, ["freq", "--paths", bare])
    assert code == 3
    assert "document" in err


# --- signatures and match ---------------------------------------------------------


def test_signature_and_match_pipeline(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    gain = {"rule": "gain-user-access",
            "site": {"type": "link", "link": "l-left-router",
                     "source": "left-computer", "target": "router"}}
    scenarios = write_json(tmp_path, {"scenarios": [
        {"id": "s1", "script": [gain], "description": "first step only"},
    ]}, "scenarios.json")

    sig_file = tmp_path / "sigs.json"
    code, out, err = run(capsys, ["signatures", "--model", path,
                                  "--scenarios", scenarios, "--out", str(sig_file)])
    assert code == 0, err
    signatures = json.loads(sig_file.read_text())["payload"]["signatures"]
    assert [(s["scenario"], s["outcome"]) for s in signatures] == [
        ("s1", "success"), ("s1", "failed-at(1)"),
    ]
    success = signatures[0]
    assert success["symptoms"] == [
        {"subject": "router", "property": "user_access", "value": True},
    ]

    observed = write_json(tmp_path, {"symptoms": success["symptoms"]}, "observed.json")
    matches = run_json(capsys, ["match", "--signatures", str(sig_file),
                                "--observed", observed])["payload"]["matches"]
    assert matches[0]["scenario"] == "s1"
    assert matches[0]["outcome"] == "success"
    assert matches[0]["similarity"] == 1.0

    code, out, err = run(capsys, ["match", "--signatures", observed,
                                  "--observed", observed])
    assert code == 3  # not a signatures report
    empty = write_json(tmp_path, {"scenarios": []}, "empty.json")
    code, out, err = run(capsys, ["signatures", "--model", path,
                                  "--scenarios", empty])
    assert code == 3


# --- diff -----------------------------------------------------------------------


def test_diff_tracks_path_metrics_across_stages(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    changes = write_json(tmp_path, {"groups": [
        {"id": "pre-enable-forwarding", "edits": [
            {"op": "set_property", "container": "router",
             "property": "forwarding_enabled", "value": True},
        ]},
    ]}, "changes.json")

    payload = run_json(capsys, ["diff", "--model", path,
                                "--changes", changes])["payload"]
    stages = payload["stages"]
    assert [s["stage"] for s in stages] == ["baseline", "pre-enable-forwarding"]
    assert stages[0]["path_count"] == 1
    assert stages[0]["min_length"] == stages[0]["max_length"] == 4
    assert stages[1]["min_length"] == 1
    shortcut = "attack-right@link:l-router-right:router->right-computer"
    assert shortcut in stages[1]["new_paths"]
    assert stages[1]["removed_paths"] == []

    bad = write_json(tmp_path, {"groups": [
        {"id": "g", "edits": [{"op": "remove_link", "id": "ghost"}]},
    ]}, "bad-changes.json")
    code, out, err = run(capsys, ["diff", "--model", path, "--changes", bad])
    assert code == 3
    code, out, err = run(capsys, ["diff", "--model", path, "--changes", path])
    assert code == 3  # a model document is not a changes file


# --- socioeng -------------------------------------------------------------------


def test_socioeng_finds_the_operational_grants(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.operational_doc())
    payload = run_json(capsys, ["socioeng", "--model", path])["payload"]
    grants = [(f["detail"]["container"], f["detail"]["property"])
              for f in payload["findings"]]
    assert grants == [
        ("left-computer", "password_known"),
        ("router", "admin_access"),
        ("router", "forwarding_enabled"),
        ("router", "user_access"),
    ]
    assert all(f["kind"] == "property-grant" for f in payload["findings"])
    assert all(f["delta_path_count"] == 1 for f in payload["findings"])

    narrowed = run_json(capsys, ["socioeng", "--model", path,
                                 "--candidates", "router"])["payload"]
    assert len(narrowed["findings"]) == 3

    code, out, _ = run(capsys, ["socioeng", "--model", path, "--format", "table"])
    assert code == 0
    assert out.splitlines()[0] == "+1 paths  grant left-computer.password_known=true"


# --- ingest ---------------------------------------------------------------------


def test_ingest_detects_patches_and_gates_the_exit_code(tmp_path, capsys):
    truth = fixtures.build(fixtures.scan_doc())
    lines = serialize_observations(
        synthesize_observations(truth, probe_ports=[22, 80, 443, 3306])
    )
    obs = tmp_path / "scan.jsonl"
    obs.write_text(lines + '{"type": "port", "address": "10.0.1.1"}\n' + "garbage\n")

    doc = fixtures.scan_doc()
    doc["containers"][0]["properties"]["open_ports"] = "22"
    stale = write_json(tmp_path, doc, "stale.json")

    payload = run_json(capsys, ["ingest", "--model", stale,
                                "--observations", str(obs)])["payload"]
    assert [d["kind"] for d in payload["report"]["discrepancies"]] == [
        "unexpected-open-port",
    ]
    assert {d["line"] for d in payload["diagnostics"]} == {15, 16}  # the junk lines

    code, out, err = run(capsys, ["ingest", "--model", stale,
                                  "--observations", str(obs),
                                  "--fail-on-discrepancy"])
    assert code == 1

    code, out, err = run(capsys, ["ingest", "--model", stale,
                                  "--observations", str(obs), "--policy", "patch"])
    assert code == 3  # --policy needs --out-model
    patched = tmp_path / "patched.json"
    envelope = run_json(capsys, ["ingest", "--model", stale,
                                 "--observations", str(obs),
                                 "--policy", "patch", "--out-model", str(patched)])
    revised = parse_model_document(patched.read_bytes())
    assert envelope["payload"]["out_model_hash"] == model_hash(revised)

    code, out, err = run(capsys, ["ingest", "--model", str(patched),
                                  "--observations", str(obs),
                                  "--fail-on-discrepancy"])
    assert code == 0

    code, out, err = run(capsys, ["ingest", "--model", stale,
                                  "--observations", str(obs), "--format", "table"])
    assert code == 0
    assert out.splitlines()[0] == "unexpected-open-port  web  10.0.1.1:80"


# --- extrapolate ----------------------------------------------------------------


def test_extrapolate_sweeps_unknowns_and_measures_sensitivity(tmp_path, capsys):
    path = write_json(tmp_path, lockbox_doc(), "lockbox.json")
    domains = write_json(tmp_path, {"domains": [
        {"container": "box", "property": "locked", "values": [False, True]},
    ]}, "domains.json")

    payload = run_json(capsys, ["extrapolate", "--model", path,
                                "--domains", domains, "--goal", "opened"])["payload"]
    assert payload["truncated"] is False
    assert [v["name"] for v in payload["variants"]] == [
        "lockbox#ext0001", "lockbox#ext0002",
    ]
    assert [r["path_count"] for r in payload["sensitivity"]["rows"]] == [1, 0]
    assert payload["sensitivity"]["spread"] == 1
    assert payload["sensitivity"]["sensitive"] is True

    capped = run_json(capsys, ["extrapolate", "--model", path,
                               "--domains", domains, "--cap", "1"])["payload"]
    assert len(capped["variants"]) == 1
    assert capped["truncated"] is True

    known = write_json(tmp_path, {"domains": [
        {"container": "box", "property": "opened", "values": [False, True]},
    ]}, "known.json")
    code, out, err = run(capsys, ["extrapolate", "--model", path,
                                  "--domains", known])
    assert code == 3


# --- spot -----------------------------------------------------------------------


def test_spot_emits_a_bare_focused_document(tmp_path, capsys):
    path = write_model(tmp_path, fixtures.router_doc())
    code, out, err = run(capsys, ["spot", "--model", path,
                                  "--focus", "right-computer"])
    assert code == 0, err
    doc = json.loads(out)
    assert "manifest" not in doc  # a model document, not a report envelope
    spot = parse_model_document(doc)
    assert [c.id for c in spot.containers] == ["boundary:router", "right-computer"]

    spot_file = tmp_path / "spot.json"
    code, out, _ = run(capsys, [
        "spot", "--model", path, "--focus", "right-computer",
        "--boundary", "forwarding_enabled=true", "--out", str(spot_file),
    ])
    assert code == 0
    assert out == ""
    payload = run_json(capsys, ["enumerate", "--model", str(spot_file)])["payload"]
    assert len(payload["paths"]) == 1
    firing = payload["paths"][0]["firings"][0]
    assert firing["binding"]["rule"] == "attack-right"
    assert firing["binding"]["site"]["source"] == "boundary:router"

    code, out, err = run(capsys, ["spot", "--model", path, "--focus", "ghost"])
    assert code == 3
    code, out, err = run(capsys, ["spot", "--model", path, "--focus", ","])
    assert code == 3
    code, out, err = run(capsys, ["spot", "--model", path,
                                  "--focus", "right-computer", "--boundary", "oops"])
    assert code == 3
