"""Model documents shared across the test suite."""
from __future__ import annotations

import copy

from sandtable.ingest import parse_model_document
from sandtable.model import Model


def _atom(subject: str, prop: str | None = None, **kw) -> dict:
    atom: dict = {"subject": subject}
    if prop is not None:
        atom["property"] = prop
    atom.update(kw)
    return atom


def router_doc() -> dict:
    """Two computers joined by a router; one four-step chain to the goal."""
    return {
        "model": {"name": "router", "severity_scale": ["low", "medium", "high"]},
        "containers": [
            {"id": "left-computer", "name": "Left computer",
             "properties": {"metasploit_installed": True}},
            {"id": "router", "name": "Router",
             "properties": {"user_access": False, "admin_access": False,
                            "forwarding_enabled": False,
                            "user_access_vulnerability": True,
                            "escalation_vulnerability": True},
             "impact": {"category": "availability", "severity": "medium"}},
            {"id": "right-computer", "name": "Right computer",
             "properties": {"compromised": False, "remote_vulnerability": True},
             "impact": {"category": "confidentiality", "severity": "high"}},
        ],
        "links": [
            {"id": "l-left-router", "a": "left-computer", "b": "router"},
            {"id": "l-router-right", "a": "router", "b": "right-computer"},
        ],
        "generic_rules": [
            {"id": "gain-user-access", "name": "Gain user access", "scope": "link",
             "pre": [_atom("source", "metasploit_installed", equals=True),
                     _atom("target", "user_access_vulnerability", equals=True)],
             "post": [{"subject": "target", "property": "user_access", "value": True}]},
            {"id": "escalate-privilege", "name": "Escalate privilege", "scope": "link",
             "pre": [_atom("source", "metasploit_installed", equals=True),
                     _atom("target", "user_access", equals=True),
                     _atom("target", "escalation_vulnerability", equals=True)],
             "post": [{"subject": "target", "property": "admin_access", "value": True}]},
            {"id": "enable-forwarding", "name": "Enable forwarding", "scope": "link",
             "kind": "configuration-change",
             "pre": [_atom("source", "metasploit_installed", equals=True),
                     _atom("target", "admin_access", equals=True)],
             "post": [{"subject": "target", "property": "forwarding_enabled",
                       "value": True}]},
            {"id": "attack-right", "name": "Attack across router", "scope": "link",
             "pre": [_atom("source", "forwarding_enabled", equals=True),
                     _atom("target", "remote_vulnerability", equals=True)],
             "post": [{"subject": "target", "property": "compromised", "value": True}]},
        ],
        "goals": [{"id": "compromise-right",
                   "conditions": [_atom("container:right-computer", "compromised",
                                        equals=True)]}],
    }


def operational_doc() -> dict:
    """Router model gated on a stolen password that a phish rule can supply.

    Out of the box there is no path at all; the phish needs two world facts
    that start false, so only a property grant (or flipping the facts) opens
    the chain.
    """
    doc = copy.deepcopy(router_doc())
    doc["model"]["name"] = "router-operational"
    doc["containers"][0]["properties"]["password_known"] = False
    for rule in doc["generic_rules"]:
        if rule["id"] == "gain-user-access":
            rule["pre"].append(_atom("source", "password_known", equals=True))
    doc["facts"] = [
        {"id": "news_coverage_positive", "value": False},
        {"id": "public_support", "value": False},
    ]
    doc["conventional_rules"] = [
        {"id": "credential-phish",
         "pre": [_atom("fact:news_coverage_positive", equals=True),
                 _atom("fact:public_support", equals=True)],
         "post": [{"subject": "container:left-computer",
                   "property": "password_known", "value": True}]},
    ]
    return doc


def diamond_doc() -> dict:
    """Two mutually exclusive routes to the prize; each mid node is on half the paths."""
    return {
        "model": {"name": "diamond"},
        "containers": [
            {"id": "start", "name": "Start", "properties": {"route": "none"}},
            {"id": "mid-a", "name": "Mid A",
             "properties": {"gate": "a", "reached": False}},
            {"id": "mid-b", "name": "Mid B",
             "properties": {"gate": "b", "reached": False}},
            {"id": "prize", "name": "Prize", "properties": {"captured": False}},
        ],
        "links": [
            {"id": "l-start-a", "a": "start", "b": "mid-a"},
            {"id": "l-start-b", "a": "start", "b": "mid-b"},
            {"id": "l-a-prize", "a": "mid-a", "b": "prize"},
            {"id": "l-b-prize", "a": "mid-b", "b": "prize"},
        ],
        "generic_rules": [
            {"id": "enter-a", "name": "Take route A", "scope": "link",
             "pre": [_atom("source", "route", equals="none"),
                     _atom("target", "gate", equals="a")],
             "post": [{"subject": "source", "property": "route", "value": "a"},
                      {"subject": "target", "property": "reached", "value": True}]},
            {"id": "enter-b", "name": "Take route B", "scope": "link",
             "pre": [_atom("source", "route", equals="none"),
                     _atom("target", "gate", equals="b")],
             "post": [{"subject": "source", "property": "route", "value": "b"},
                      {"subject": "target", "property": "reached", "value": True}]},
            {"id": "claim", "name": "Claim the prize", "scope": "link",
             "pre": [_atom("source", "reached", equals=True),
                     _atom("target", "captured", equals=False)],
             "post": [{"subject": "target", "property": "captured", "value": True}]},
        ],
        "goals": [{"id": "capture",
                   "conditions": [_atom("container:prize", "captured", equals=True)]}],
    }


def oscillator_doc() -> dict:
    """Two automatic rules that flip a switch back and forth forever."""
    return {
        "model": {"name": "oscillator"},
        "containers": [
            {"id": "osc", "name": "Oscillator", "properties": {"lamp": False}},
        ],
        "conventional_rules": [
            {"id": "flip-on", "mode": "automatic", "repeatable": True,
             "pre": [_atom("container:osc", "lamp", equals=False)],
             "post": [{"subject": "container:osc", "property": "lamp", "value": True}]},
            {"id": "flip-off", "mode": "automatic", "repeatable": True,
             "pre": [_atom("container:osc", "lamp", equals=True)],
             "post": [{"subject": "container:osc", "property": "lamp", "value": False}]},
        ],
        "goals": [{"id": "lit",
                   "conditions": [_atom("container:osc", "lamp", equals=True)]}],
    }


def nested_doc() -> dict:
    """A plant with two lines and a controller; exercises every rule scope."""
    return {
        "model": {"name": "supply-plant"},
        "containers": [
            {"id": "laptop", "name": "Attacker laptop", "properties": {"access": True}},
            {"id": "plant", "name": "Plant",
             "properties": {"breached": False, "secured": False}},
            {"id": "line-1", "name": "Line 1", "parent": "plant",
             "properties": {"infected": False, "audited": False}},
            {"id": "line-2", "name": "Line 2", "parent": "plant",
             "properties": {"infected": False, "audited": False}},
            {"id": "controller", "name": "Controller", "parent": "line-1",
             "properties": {"firmware_bad": False}},
        ],
        "links": [
            {"id": "l-laptop-plant", "a": "laptop", "b": "plant"},
        ],
        "generic_rules": [
            {"id": "breach-plant", "name": "Breach the plant", "scope": "link",
             "pre": [_atom("source", "access", equals=True)],
             "post": [{"subject": "target", "property": "breached", "value": True}]},
            {"id": "infect-line", "name": "Infect a line", "scope": "parent-child",
             "pre": [_atom("parent", "breached", equals=True)],
             "post": [{"subject": "child", "property": "infected", "value": True}]},
            {"id": "corrupt-controller", "name": "Corrupt firmware",
             "scope": "parent-child",
             "pre": [_atom("parent", "infected", equals=True)],
             "post": [{"subject": "child", "property": "firmware_bad", "value": True}]},
            {"id": "spread-sideways", "name": "Spread between lines",
             "scope": "sibling",
             "parent_filter": [_atom("parent", "breached", equals=True)],
             "pre": [_atom("source", "infected", equals=True)],
             "post": [{"subject": "target", "property": "infected", "value": True}]},
            {"id": "audit-children", "name": "Audit every line",
             "scope": "multi-child",
             "pre": [_atom("parent", "breached", equals=True)],
             "post": [{"subject": "child", "property": "audited", "value": True}]},
        ],
        "goals": [{"id": "bad-firmware",
                   "conditions": [_atom("container:controller", "firmware_bad",
                                        equals=True)]}],
    }


def scale_doc(n_hosts: int = 20) -> dict:
    """A long chain of hosts plus a pile of rules that never enable."""
    containers = [
        {"id": f"host-{i:02d}", "name": f"Host {i:02d}",
         "properties": {"owned": i == 0, "maintenance": False}}
        for i in range(n_hosts)
    ]
    links = [
        {"id": f"l-{i:02d}", "a": f"host-{i:02d}", "b": f"host-{i + 1:02d}"}
        for i in range(n_hosts - 1)
    ]
    rules = [
        {"id": "hop", "name": "Hop along the chain", "scope": "link",
         "pre": [_atom("source", "owned", equals=True),
                 _atom("target", "owned", equals=False)],
         "post": [{"subject": "target", "property": "owned", "value": True}]},
    ]
    for i in range(29):
        rules.append({
            "id": f"audit-{i:02d}", "name": f"Audit pass {i:02d}", "scope": "link",
            "kind": "configuration-change",
            "pre": [_atom("source", "maintenance", equals=True)],
            "post": [{"subject": "target", "property": "maintenance", "value": True}],
        })
    last = f"host-{n_hosts - 1:02d}"
    return {
        "model": {"name": "chain"},
        "containers": containers,
        "links": links,
        "generic_rules": rules,
        "goals": [{"id": "own-last",
                   "conditions": [_atom(f"container:{last}", "owned", equals=True)]}],
    }


def scan_doc() -> dict:
    """Two hosts with declared addresses, ports, services, and filter rules."""
    return {
        "model": {"name": "scan-baseline"},
        "containers": [
            {"id": "web", "name": "Web server", "addresses": ["10.0.1.1"],
             "properties": {"open_ports": "22,80",
                            "services": "22=OpenSSH;80=Apache",
                            "forwards": "10.0.2.1:3306:allow;*:*:deny",
                            "closed_world": True}},
            {"id": "db", "name": "Database", "addresses": ["10.0.2.1"],
             "properties": {"open_ports": "22,3306",
                            "services": "3306=MySQL",
                            "forwards": "*:*:deny",
                            "closed_world": True}},
        ],
    }


def build(doc: dict) -> Model:
    return parse_model_document(doc)
