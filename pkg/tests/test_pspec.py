"""Parser, serializer, and round-trip checks for the system text format."""

from __future__ import annotations

import pytest

from pgne.builder import build_gne_system, build_mult_system
from pgne.engine import (MINUS, NEUTRAL, PLUS, ChildPattern, MembraneNode,
                        PSystem, RuleSpec, compile_system, run)
from pgne.harness import sample_experiment
from pgne.pspec import (PSpecError, parse_system, serialize_system,
                        systems_equal)
from pgne.symbols import Multiset, sym

SMALL = """
# two nested membranes with a couple of rules
system 'demo
membranes:
  [ '0 ^0 { seed^2 }
    [ 'a ^+ { tok{1,2}^3 } ]
  ]
rules:
  rule 'r1 at 'a ^+ -> ^0 in( tok{1,2} -> done ) out( none -> flag )
  rule 'r2 at '0 ^0 -> ^0 in( seed -> none ) child( 'a ^0 -> ^+ : done -> tok{1,2} )
priority:
  'r1 > 'r2
"""


def test_parse_small():
    s = parse_system(SMALL)
    assert s.name == "demo"
    assert s.tree.label == "0"
    assert s.tree.contents.get(sym("seed")) == 2
    inner = s.tree.children[0]
    assert inner.label == "a" and inner.charge == PLUS
    assert inner.contents.get(sym("tok", 1, 2)) == 3
    r1, r2 = s.rules
    assert r1.id == "r1" and r1.pre == PLUS and r1.post == NEUTRAL
    assert r1.consume_in == {sym("tok", 1, 2): 1}
    assert r1.produce_in == {sym("done"): 1}
    assert r1.consume_out == {} and r1.produce_out == {sym("flag"): 1}
    assert r2.child == ChildPattern("a", NEUTRAL, PLUS,
                                    {sym("done"): 1}, {sym("tok", 1, 2): 1})
    assert s.priority == [("r1", "r2")]


def test_round_trip_small():
    s = parse_system(SMALL)
    assert systems_equal(parse_system(serialize_system(s)), s)


def test_serialize_is_canonical_fixed_point():
    s = parse_system(SMALL)
    text = serialize_system(s)
    assert serialize_system(parse_system(text)) == text


def test_round_trip_mult_system():
    s = build_mult_system(9, 7)
    t = parse_system(serialize_system(s))
    assert systems_equal(t, s)
    # The reparsed system must behave identically, not just look alike.
    a = run(compile_system(s), max_steps=60)
    b = run(compile_system(t), max_steps=60)
    assert a.final.equal_state(b.final)
    assert ([[(cr.id, c) for cr, c in step] for step in a.records]
            == [[(cr.id, c) for cr, c in step] for step in b.records])


@pytest.mark.parametrize("seed", [0, 4])
def test_round_trip_gne_system(seed):
    spec = sample_experiment(seed, "small", loops=2)
    s = build_gne_system(spec)
    assert systems_equal(parse_system(serialize_system(s)), s)


def test_alphabet_is_validated():
    bad = SMALL.replace("system 'demo", "system 'demo\nalphabet:\n  seed tok")
    with pytest.raises(PSpecError, match="missing from alphabet"):
        parse_system(bad)
    ok = SMALL.replace("system 'demo",
                       "system 'demo\nalphabet:\n  seed tok done flag")
    parse_system(ok)


# ============================================================
# Error positions and malformed input
# ============================================================


def check_error(text, needle, line=None):
    with pytest.raises(PSpecError) as info:
        parse_system(text)
    assert needle in str(info.value)
    if line is not None:
        assert info.value.line == line


def test_duplicate_membrane_label():
    check_error("membranes:\n  [ 'x ^0 [ 'x ^0 ] ]", "duplicate membrane")


def test_duplicate_rule_id():
    text = ("membranes:\n  [ 'm ^0 ]\nrules:\n"
            "  rule 'r at 'm ^0 -> ^0 in( a -> b )\n"
            "  rule 'r at 'm ^0 -> ^0 in( b -> a )\n")
    check_error(text, "duplicate rule id", line=5)


def test_unknown_target():
    text = "membranes:\n  [ 'm ^0 ]\nrules:\n  rule 'r at 'q ^0 -> ^0 in( a -> b )\n"
    check_error(text, "unknown membrane")


def test_child_must_be_direct():
    text = ("membranes:\n  [ 'm ^0 [ 'n ^0 ] ]\nrules:\n"
            "  rule 'r at 'n ^0 -> ^0 child( 'm ^0 -> ^0 : a -> b )\n")
    check_error(text, "not a child")


def test_priority_names_unknown_rule():
    text = ("membranes:\n  [ 'm ^0 ]\nrules:\n"
            "  rule 'r at 'm ^0 -> ^0 in( a -> b )\npriority:\n  'r > 'zz\n")
    check_error(text, "unknown rule")


def test_zero_count_rejected():
    check_error("membranes:\n  [ 'm ^0 { a^0 } ]", "zero count")


def test_bad_charge_position():
    check_error("membranes:\n  [ 'm ^* ]", "bad charge", line=2)


def test_stray_dash():
    check_error("membranes:\n  [ 'm ^0 { a } - ]", "stray '-'")


def test_unterminated_params():
    check_error("membranes:\n  [ 'm ^0 { a{1 ]", "unterminated")


def test_params_may_contain_spaces():
    # find-the-brace lexing tolerates padding inside parameter lists
    s = parse_system("membranes:\n  [ 'm ^0 { a{1, 2} } ]")
    assert s.tree.contents.get(sym("a", 1, 2)) == 1


def test_missing_membranes_section():
    check_error("rules:\n", "missing membranes")
    check_error("# nothing\n", "missing membranes")


def test_duplicate_section():
    check_error("membranes:\n  [ 'm ^0 ]\nmembranes:\n  [ 'q ^0 ]",
                "duplicate section")


def test_duplicate_clause():
    text = ("membranes:\n  [ 'm ^0 ]\nrules:\n"
            "  rule 'r at 'm ^0 -> ^0 in( a -> b ) in( c -> d )\n")
    check_error(text, "duplicate clause")


def test_unserializable_label():
    s = PSystem(MembraneNode("has space"), [])
    with pytest.raises(PSpecError, match="not serializable"):
        serialize_system(s)


def test_comments_and_counts():
    text = ("membranes:  # trailing comment\n"
            "  [ 'm ^0 { a^1 b^12 } ]  # byte count\n")
    s = parse_system(text)
    assert s.tree.contents.get(sym("a")) == 1
    assert s.tree.contents.get(sym("b")) == 12


def test_order_of_rules_is_preserved():
    text = ("membranes:\n  [ 'm ^0 ]\nrules:\n"
            "  rule 'zz at 'm ^0 -> ^0 in( a -> b )\n"
            "  rule 'aa at 'm ^0 -> ^0 in( b -> a )\n")
    s = parse_system(text)
    assert [r.id for r in s.rules] == ["zz", "aa"]
    # Rank is declaration order, so reordering changes the system.
    t = parse_system(serialize_system(s))
    assert [r.id for r in t.rules] == ["zz", "aa"]


def test_systems_equal_detects_differences():
    s = parse_system(SMALL)
    t = parse_system(SMALL)
    assert systems_equal(s, t)
    t.rules[0].produce_in[sym("done")] = 2
    assert not systems_equal(s, t)
    u = parse_system(SMALL)
    u.tree.children[0].charge = MINUS
    assert not systems_equal(s, u)
    v = parse_system(SMALL)
    v.rules.reverse()
    assert not systems_equal(s, v)
