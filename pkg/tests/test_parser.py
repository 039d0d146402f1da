from __future__ import annotations

import pytest

from helpers import MODELS

from fraglump.parser import (
    Model,
    ModelError,
    format_model,
    parse_model,
    parse_pattern,
    validate_model,
)
from fraglump.sitegraph import BOUND, FREE

SIGS = """
%agent: A(a!B.a)
%agent: B(a!A.a, c!C.c, s~u~p)
%agent: C(c!B.c)
"""


def _codes(text: str, validate: bool = True) -> list[str]:
    with pytest.raises(ModelError) as info:
        parse_model(text, validate=validate)
    return [d.code for d in info.value.diagnostics]


def test_core_model_shape(core_model):
    assert sorted(core_model.signatures) == ["A", "B", "C"]
    assert [r.name for r in core_model.rules] == ["R1", "R2", "R1-", "R2-"]
    assert [r.rate for r in core_model.rules] == [1.0, 0.2, 2.0, 0.3]
    assert all(r.molecularity == 2 for r in core_model.rules[:2])
    assert all(r.molecularity == 1 for r in core_model.rules[2:])
    assert [d.count for d in core_model.init] == [1, 3, 1]
    assert validate_model(core_model) == []


def test_empty_input():
    m = parse_model("")
    assert m == Model()
    assert parse_model("# only a comment\n\n") == Model()


def test_link_syntax():
    g = parse_pattern("B(a, c?, s~p!_)")
    b = g.agents[0]
    assert b.site("a").link == FREE
    assert b.site("c").link is None
    assert b.site("s").link == BOUND and b.site("s").internal == "p"
    assert parse_pattern("B(a)").agents[0].site("c") is None


def test_rule_documenting_site_on_one_side_is_rejected():
    text = SIGS + "'bad' B(a, c) -> B(a!_)  @ 1 det\n"
    assert "E_RULE_SITES" in _codes(text)
    text = SIGS + "'bad' B(c), C(c) -> B(), C(c) @ 1 det\n"
    assert "E_RULE_SITES" in _codes(text)


def test_rule_agent_mismatch():
    assert "E_RULE_AGENTS" in _codes(SIGS + "'bad' A(a) -> B(a) @ 1 det\n")


def test_contact_map_violation_gives_one_diagnostic():
    text = SIGS + "'bad' A(a), C(c) -> A(a!1), C(c!1) @ 1 det\n"
    m = parse_model(text, validate=False)
    diags = validate_model(m)
    # the bond violates the map once from each endpoint's point of view on the rhs
    assert {d.code for d in diags} == {"E_CONTACT"}
    assert all(d.line == 5 for d in diags)


def test_negative_rate_gives_one_diagnostic():
    m = parse_model(SIGS + "'neg' A(a), B(a) -> A(a!1), B(a!1) @ -1 det\n", validate=False)
    assert [d.code for d in validate_model(m)] == ["E_RATE_NEGATIVE"]


def test_lexical_error_has_location():
    with pytest.raises(ModelError) as info:
        parse_model(SIGS + "'x' A(a -> A(a) @ 1 det\n")
    d = info.value.diagnostics[0]
    assert d.code == "E_SYNTAX" and d.line == 5 and d.column > 1
    assert set(d.as_dict()) >= {"code", "line", "column", "message"}


def test_unknown_names():
    assert "E_UNKNOWN_AGENT" in _codes(SIGS + "%init: 1 D()\n")
    assert "E_UNKNOWN_SITE" in _codes(SIGS + "'r' A(z) -> A(z) @ 1 det\n")
    assert "E_UNKNOWN_STATE" in _codes(SIGS + "'r' B(s~u) -> B(s~q) @ 1 det\n")


def test_asymmetric_signature():
    assert "E_ASYMMETRIC_BOND" in _codes("%agent: A(a!B.a)\n%agent: B(a)\n")


def test_partial_init_rejected():
    assert "E_INIT_PARTIAL" in _codes(SIGS + "%init: 2 B(a)\n")
    assert "E_INIT_PARTIAL" in _codes(SIGS + "%init: 2 B(a, c, s)\n")


def test_bond_label_errors():
    assert "E_BOND_LABEL" in _codes(SIGS + "%init: 1 A(a!1)\n")


def test_reversible_rule():
    m = parse_model(SIGS + "'b' A(a), B(a) <-> A(a!1), B(a!1) @ 1.5, 0.5 det\n")
    assert [(r.name, r.rate) for r in m.rules] == [("b", 1.5), ("b_op", 0.5)]
    assert m.rules[1].lhs == m.rules[0].rhs


@pytest.mark.parametrize("path", sorted(MODELS.glob("*.ka")), ids=lambda p: p.stem)
def test_round_trip(path):
    m = parse_model(path.read_text())
    again = parse_model(format_model(m))
    assert again == m


def test_every_diagnostic_has_span_inside_text():
    text = SIGS + "'a' A(a), C(c) -> A(a!1), C(c!1) @ -2 det\n%init: 1 B(a)\n"
    m = parse_model(text, validate=False)
    n_lines = len(text.splitlines())
    for d in validate_model(m):
        assert 1 <= d.line <= n_lines and d.column >= 1
