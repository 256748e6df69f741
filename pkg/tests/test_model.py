"""Model structure, validation, and the reserved property encodings."""
from __future__ import annotations

import copy

import pytest

import fixtures
from sandtable.errors import KindMismatch, ModelValidationError
from sandtable.ingest import parse_model_document
from sandtable.model import (
    ABSENT,
    UNKNOWN,
    ConditionAtom,
    Container,
    GenericRule,
    Goal,
    Link,
    Model,
    ModelIndex,
    Assignment,
    canonical_json,
    check_comparable,
    match_forward,
    parse_forwards,
    parse_open_ports,
    parse_services,
    validate_model,
    value_kind,
)


def kinds(violations):
    return sorted({v.kind for v in violations})


def test_fixture_models_are_valid():
    for name in ("router_doc", "operational_doc", "diamond_doc", "oscillator_doc",
                 "nested_doc", "scale_doc", "scan_doc"):
        model = fixtures.build(getattr(fixtures, name)())
        assert validate_model(model) == []


def test_value_kinds():
    assert value_kind(True) == "boolean"
    assert value_kind(3) == "integer"
    assert value_kind("ssh") == "text"
    assert value_kind(UNKNOWN) == "unknown"
    with pytest.raises(TypeError):
        value_kind(3.5)


def test_booleans_are_not_integers():
    # Python's bool subclasses int; the kind system must keep them apart.
    assert value_kind(True) != value_kind(1)
    with pytest.raises(KindMismatch):
        check_comparable(True, 1)


def test_comparing_against_unknown_raises():
    with pytest.raises(KindMismatch):
        check_comparable(UNKNOWN, 5)


def test_duplicate_container_id():
    model = Model(name="m", containers=(
        Container("a", "A"), Container("a", "A again"),
    ))
    assert "duplicate-id" in kinds(validate_model(model))


def test_rule_ids_share_one_namespace():
    doc = fixtures.operational_doc()
    doc["conventional_rules"][0]["id"] = "gain-user-access"
    with pytest.raises(ModelValidationError) as err:
        parse_model_document(doc)
    assert any(v.kind == "duplicate-id" for v in err.value.violations)


def test_parent_cycle_detected():
    model = Model(name="m", containers=(
        Container("a", "A", parent="b"),
        Container("b", "B", parent="a"),
    ))
    assert "parent-cycle" in kinds(validate_model(model))


def test_self_parent_reported_once():
    model = Model(name="m", containers=(Container("a", "A", parent="a"),))
    violations = [v for v in validate_model(model) if v.kind == "parent-cycle"]
    assert len(violations) == 1


def test_dangling_link_endpoint():
    model = Model(name="m", containers=(Container("a", "A"),),
                  links=(Link("l", "a", "ghost"),))
    assert "dangling-reference" in kinds(validate_model(model))


def test_self_loop_link_rejected():
    model = Model(name="m", containers=(Container("a", "A"),),
                  links=(Link("l", "a", "a"),))
    assert validate_model(model)


def test_duplicate_unordered_link_pair():
    model = Model(name="m",
                  containers=(Container("a", "A"), Container("b", "B")),
                  links=(Link("l1", "a", "b"), Link("l2", "b", "a")))
    assert "duplicate-id" in kinds(validate_model(model))


def test_duplicate_address_claim():
    model = Model(name="m", containers=(
        Container("a", "A", addresses=("10.0.0.1",)),
        Container("b", "B", addresses=("10.0.0.1",)),
    ))
    assert validate_model(model)


def test_property_kind_registry_catches_conflicts():
    model = Model(name="m", containers=(
        Container("a", "A", properties={"port": 22}),
        Container("b", "B", properties={"port": "ssh"}),
    ))
    assert "type-mismatch" in kinds(validate_model(model))


def test_rule_atom_value_joins_kind_registry():
    rule = GenericRule(
        id="r", name="r", kind="attack", scope="link",
        pre=(ConditionAtom.equals("source", "port", True),),
        post=(Assignment("target", "port", 22),),
    )
    model = Model(
        name="m",
        containers=(Container("a", "A"), Container("b", "B")),
        links=(Link("l", "a", "b"),),
        generic_rules=(rule,),
    )
    assert "type-mismatch" in kinds(validate_model(model))


def test_impact_severity_must_be_on_the_scale():
    doc = copy.deepcopy(fixtures.router_doc())
    doc["containers"][1]["impact"]["severity"] = "catastrophic"
    with pytest.raises(ModelValidationError):
        parse_model_document(doc)


def test_link_subject_cannot_be_written():
    rule = GenericRule(
        id="r", name="r", kind="attack", scope="link",
        pre=(ConditionAtom.equals("source", "p", True),),
        post=(Assignment("link", "p", True),),
    )
    model = Model(
        name="m",
        containers=(Container("a", "A", properties={"p": True}), Container("b", "B")),
        links=(Link("l", "a", "b"),),
        generic_rules=(rule,),
    )
    assert "scope-violation" in kinds(validate_model(model))


def test_scope_restricts_atom_subjects():
    rule = GenericRule(
        id="r", name="r", kind="attack", scope="link",
        pre=(ConditionAtom.equals("parent", "p", True),),
        post=(Assignment("target", "p", True),),
    )
    model = Model(
        name="m",
        containers=(Container("a", "A", properties={"p": True}), Container("b", "B")),
        links=(Link("l", "a", "b"),),
        generic_rules=(rule,),
    )
    assert "scope-violation" in kinds(validate_model(model))


def test_atom_must_not_compare_against_unknown():
    rule = GenericRule(
        id="r", name="r", kind="attack", scope="link",
        pre=(ConditionAtom.equals("source", "p", UNKNOWN),),
        post=(Assignment("target", "p", True),),
    )
    model = Model(
        name="m",
        containers=(Container("a", "A", properties={"p": True}), Container("b", "B")),
        links=(Link("l", "a", "b"),),
        generic_rules=(rule,),
    )
    assert "shape" in kinds(validate_model(model))


def test_goal_needs_conditions():
    model = Model(name="m", containers=(Container("a", "A"),),
                  goals=(Goal("g", ()),))
    assert validate_model(model)


def test_reserved_property_formats_checked():
    model = Model(name="m", containers=(
        Container("a", "A", properties={"open_ports": "22,abc"}),
    ))
    assert "reserved-property" in kinds(validate_model(model))


def test_index_children_and_walks(nested_model):
    index = ModelIndex(nested_model)
    assert index.children["plant"] == ("line-1", "line-2")
    assert list(index.ancestors("controller")) == ["line-1", "plant"]
    assert set(index.descendants("plant")) == {"line-1", "line-2", "controller"}


def test_parse_open_ports():
    assert parse_open_ports("22,80") == [22, 80]
    assert parse_open_ports("") == []
    with pytest.raises(ValueError):
        parse_open_ports("22,abc")


def test_parse_services():
    assert parse_services("22=OpenSSH;80=Apache") == {22: "OpenSSH", 80: "Apache"}
    with pytest.raises(ValueError):
        parse_services("22OpenSSH")


def test_parse_forwards_and_matching():
    entries = parse_forwards("10.0.2.1:3306:allow;10.0.*:*:deny;*:*:allow")
    assert entries[0] == ("10.0.2.1", 3306, True)
    assert match_forward(entries, "10.0.2.1", 3306) is True
    assert match_forward(entries, "10.0.2.1", 22) is False  # wildcard deny shadows
    assert match_forward(entries, "192.168.0.9", 443) is True
    assert match_forward([], "10.0.2.1", 22) is None


def test_forward_first_match_wins():
    entries = parse_forwards("*:*:deny;10.0.2.1:3306:allow")
    assert match_forward(entries, "10.0.2.1", 3306) is False


def test_canonical_json_is_compact_and_sorted():
    assert canonical_json({"b": 1, "a": [True, None]}) == '{"a":[true,null],"b":1}'


def test_sentinels_survive_copying():
    assert copy.deepcopy(UNKNOWN) is UNKNOWN
    assert copy.copy(ABSENT) is ABSENT
