from __future__ import annotations

import pytest

import fixtures


@pytest.fixture
def router_model():
    return fixtures.build(fixtures.router_doc())


@pytest.fixture
def operational_model():
    return fixtures.build(fixtures.operational_doc())


@pytest.fixture
def diamond_model():
    return fixtures.build(fixtures.diamond_doc())


@pytest.fixture
def nested_model():
    return fixtures.build(fixtures.nested_doc())


@pytest.fixture
def scan_model():
    return fixtures.build(fixtures.scan_doc())
