"""World state semantics: hashing, diffing, assignment application."""
from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

import fixtures
from sandtable.errors import ModelMismatch, ModelValidationError, UnknownSubject
from sandtable.model import ABSENT, UNKNOWN, Container, Model
from sandtable.state import (
    BoundAssignment,
    apply_assignments,
    decode_value,
    diff_states,
    initial_state,
    state_hash,
    state_payload,
    symptom_from_payload,
    symptom_payload,
    values_equal,
)


def test_initial_state_copies_declarations(router_model):
    state = initial_state(router_model, validated=True)
    assert state.container_properties["router"]["user_access"] is False
    assert state.facts == {}


def test_initial_state_validates_by_default():
    broken = Model(name="m", containers=(
        Container("a", "A"), Container("a", "B"),
    ))
    with pytest.raises(ModelValidationError):
        initial_state(broken)


def test_apply_assignment_is_copy_on_write(router_model):
    state = initial_state(router_model, validated=True)
    after = apply_assignments(state, [BoundAssignment("router", "user_access", True)])
    assert state.container_properties["router"]["user_access"] is False
    assert after.container_properties["router"]["user_access"] is True
    # untouched containers share their dict
    assert after.container_properties["left-computer"] is state.container_properties["left-computer"]


def test_last_writer_wins(router_model):
    state = initial_state(router_model, validated=True)
    after = apply_assignments(state, [
        BoundAssignment("router", "user_access", True),
        BoundAssignment("router", "user_access", False),
    ])
    assert after.container_properties["router"]["user_access"] is False


def test_unknown_subject_raises(router_model):
    state = initial_state(router_model, validated=True)
    with pytest.raises(UnknownSubject):
        apply_assignments(state, [BoundAssignment("ghost", "p", True)])


def test_absent_assignment_removes(router_model):
    state = initial_state(router_model, validated=True)
    after = apply_assignments(state, [BoundAssignment("router", "user_access", ABSENT)])
    assert "user_access" not in after.container_properties["router"]


def test_state_hash_is_stable_and_order_free(router_model):
    state = initial_state(router_model, validated=True)
    a = apply_assignments(state, [
        BoundAssignment("router", "user_access", True),
        BoundAssignment("router", "admin_access", True),
    ])
    b = apply_assignments(state, [
        BoundAssignment("router", "admin_access", True),
        BoundAssignment("router", "user_access", True),
    ])
    assert state_hash(a) == state_hash(b)
    assert state_hash(a) != state_hash(state)


def test_values_equal_uses_kind_identity():
    assert values_equal(True, True)
    assert not values_equal(True, 1)
    assert not values_equal(0, False)
    assert values_equal(UNKNOWN, UNKNOWN)
    assert not values_equal(UNKNOWN, ABSENT)


def test_diff_states_reports_both_sides(router_model):
    state = initial_state(router_model, validated=True)
    after = apply_assignments(state, [BoundAssignment("router", "user_access", True)])
    (symptom,) = diff_states(state, after)
    assert (symptom.subject, symptom.property) == ("router", "user_access")
    assert symptom.old is False and symptom.new is True


def test_diff_uses_absent_for_missing_sides(router_model):
    state = initial_state(router_model, validated=True)
    after = apply_assignments(state, [BoundAssignment("router", "patched", True)])
    (symptom,) = diff_states(state, after)
    assert symptom.old is ABSENT and symptom.new is True


def test_diff_requires_matching_frames(router_model, diamond_model):
    a = initial_state(router_model, validated=True)
    b = initial_state(diamond_model, validated=True)
    with pytest.raises(ModelMismatch):
        diff_states(a, b)


def test_fact_diffing(operational_model):
    state = initial_state(operational_model, validated=True)
    after = apply_assignments(state, [
        BoundAssignment("fact:public_support", None, True),
    ])
    (symptom,) = diff_states(state, after)
    assert symptom.subject == "fact:public_support"
    assert symptom.property is None


scalars = st.one_of(
    st.booleans(),
    st.integers(min_value=-10**6, max_value=10**6),
    st.text(max_size=12),
    st.just(UNKNOWN),
)


@given(subject=st.text(min_size=1, max_size=8), prop=st.text(min_size=1, max_size=8),
       old=st.one_of(scalars, st.just(ABSENT)), new=st.one_of(scalars, st.just(ABSENT)))
def test_symptom_payload_round_trip(subject, prop, old, new):
    from sandtable.state import Symptom

    symptom = Symptom(subject, prop, old, new)
    back = symptom_from_payload(symptom_payload(symptom))
    assert back == symptom


@given(value=st.one_of(scalars, st.just(ABSENT)))
def test_value_encoding_round_trip(value):
    from sandtable.state import encode_value

    assert values_equal(decode_value(encode_value(value)), value)


def test_state_payload_is_canonical(router_model):
    state = initial_state(router_model, validated=True)
    payload = state_payload(state)
    assert sorted(payload["containers"]) == list(payload["containers"])
