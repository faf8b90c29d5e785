"""Single-step and small-system semantics of the rewriting engine."""

from __future__ import annotations

import pytest

from pgne.engine import (ENV_LABEL, MINUS, NEUTRAL, PLUS, ChildPattern,
                        MembraneNode, PSystem, RuleSpec, StructureError,
                        Trace, apply_record, compile_system,
                        export_trace_text, maximal_step, read_region,
                        replay_matches, run)
from pgne.symbols import Multiset, sym

A, B, C, D, X, Y = (sym(t) for t in "abcdxy")


def one_region(rules, priority=(), contents=None):
    tree = MembraneNode("m", contents=Multiset(contents or {}))
    return compile_system(PSystem(tree, list(rules), list(priority)))


def rule(rid, **kw):
    kw.setdefault("target", "m")
    return RuleSpec(id=rid, **kw)


# ============================================================
# Core stepping semantics
# ============================================================


def test_maximality_consumes_everything():
    csys = one_region([rule("r", consume_in={A: 2}, produce_in={B: 1})],
                      contents={A: 7})
    tr = run(csys, max_steps=5)
    assert tr.steps == 1
    assert tr.records[0][0][1] == 3  # floor(7 / 2) applications
    assert read_region(tr.final, "m").counts == {A: 1, B: 3}


def test_products_invisible_until_commit():
    csys = one_region([
        rule("make", consume_in={A: 1}, produce_in={B: 1}),
        rule("use", consume_in={B: 1}, produce_in={C: 1}),
    ], contents={A: 1})
    tr = run(csys, max_steps=5, trace_mode="full")
    # b exists only after step 1, so `use` cannot fire before step 2.
    assert tr.rule_ids(1) == ["make"]
    assert tr.rule_ids(2) == ["use"]
    assert read_region(tr.final, "m").counts == {C: 1}


def test_greedy_declaration_order_splits_shared_tokens():
    csys = one_region([
        rule("first", consume_in={A: 1}, produce_in={B: 1}),
        rule("second", consume_in={A: 1}, produce_in={C: 1}),
    ], contents={A: 3})
    tr = run(csys, max_steps=2)
    # Unrelated rules run greedily in declaration order: first takes all.
    assert tr.fired("first", 1) == 3
    assert tr.fired("second", 1) == 0


def test_priority_inverts_declaration_order():
    csys = one_region([
        rule("first", consume_in={A: 1}, produce_in={B: 1}),
        rule("second", consume_in={A: 1}, produce_in={C: 1}),
    ], priority=[("second", "first")], contents={A: 3})
    tr = run(csys, max_steps=2)
    assert tr.fired("second", 1) == 3
    assert tr.fired("first", 1) == 0


def test_strong_priority_blocks_while_higher_applicable():
    # high needs both a and x; with x missing it cannot fire, so low runs.
    rules = [
        rule("high", consume_in={A: 1, X: 1}, produce_in={B: 1}),
        rule("low", consume_in={A: 1}, produce_in={C: 1}),
    ]
    blocked = run(one_region(rules, [("high", "low")], {A: 2, X: 1}),
                  max_steps=3)
    # One high application exhausts x; the leftover a then goes to low
    # in the same step because high is no longer applicable.
    assert blocked.fired("high", 1) == 1
    assert blocked.fired("low", 1) == 1

    free = run(one_region(rules, [("high", "low")], {A: 2}), max_steps=3)
    assert free.fired("high", 1) == 0
    assert free.fired("low", 1) == 2


def test_charge_cap_exhausts_applicability_for_blocking():
    # high is charge-changing: the one-change cap spends its
    # applicability for the step, so low may run alongside.
    rules = [
        rule("high", pre=NEUTRAL, post=PLUS, consume_in={X: 1}),
        rule("low", consume_in={A: 1}, produce_in={C: 1}),
    ]
    tr = run(one_region(rules, [("high", "low")], {A: 1, X: 5}), max_steps=9)
    assert tr.fired("high", 1) == 1
    assert tr.fired("low", 1) == 1


def test_transitive_priority_closure():
    rules = [
        rule("top", consume_in={X: 1}, produce_in={B: 1}),
        rule("mid", consume_in={Y: 1}, produce_in={B: 1}),
        rule("bot", consume_in={A: 1}, produce_in={C: 1}),
    ]
    pri = [("top", "mid"), ("mid", "bot")]
    csys = one_region(rules, pri, {A: 1, X: 1})
    by_id = {c.id: c for c in csys.rules}
    assert {h.id for h in by_id["bot"].higher} == {"top", "mid"}
    assert {h.id for h in by_id["mid"].higher} == {"top"}
    assert by_id["top"].higher == ()
    # Selection still processes higher rules first; the starved mid
    # takes nothing and the others fire in the same step.
    tr = run(csys, max_steps=3)
    assert tr.fired("top", 1) == 1
    assert tr.fired("mid", 1) == 0
    assert tr.fired("bot", 1) == 1


# ============================================================
# Charges
# ============================================================


def test_charge_gates_applicability():
    csys = one_region([
        rule("flip", pre=NEUTRAL, post=PLUS, consume_in={A: 1}),
        rule("plus_only", pre=PLUS, post=PLUS, consume_in={B: 1},
             produce_in={C: 1}),
    ], contents={A: 1, B: 1})
    tr = run(csys, max_steps=5)
    # plus_only sees the new charge one step after flip stages it.
    assert tr.rule_ids(1) == ["flip"]
    assert tr.rule_ids(2) == ["plus_only"]


def test_charge_change_applies_once_per_step():
    csys = one_region([rule("flip", pre=NEUTRAL, post=PLUS,
                            consume_in={A: 1})], contents={A: 5})
    tr = run(csys, max_steps=1)
    assert tr.fired("flip", 1) == 1
    assert read_region(tr.final, "m").get(A) == 4
    assert tr.final.charge("m") == PLUS


def test_one_charge_change_per_membrane_per_step():
    csys = one_region([
        rule("to_plus", pre=NEUTRAL, post=PLUS, consume_in={A: 1}),
        rule("to_minus", pre=NEUTRAL, post=MINUS, consume_in={B: 1}),
    ], contents={A: 1, B: 1})
    tr = run(csys, max_steps=1)
    assert tr.rule_ids(1) == ["to_plus"]
    assert tr.final.charge("m") == PLUS
    assert read_region(tr.final, "m").counts == {B: 1}


def test_rewriting_rules_run_alongside_the_charge_change():
    csys = one_region([
        rule("flip", pre=NEUTRAL, post=MINUS, consume_in={A: 1}),
        rule("work", pre=NEUTRAL, post=NEUTRAL, consume_in={B: 1},
             produce_in={C: 1}),
    ], contents={A: 1, B: 4})
    tr = run(csys, max_steps=1)
    # work is gated on the pre-step charge, so it fires in the same step.
    assert tr.fired("work", 1) == 4
    assert tr.final.charge("m") == MINUS


def test_child_pattern_and_charge():
    tree = MembraneNode("p", children=[
        MembraneNode("q", contents=Multiset({A: 2}))])
    rules = [RuleSpec(id="open", target="p",
                      consume_in={X: 1},
                      child=ChildPattern("q", NEUTRAL, PLUS, {A: 1}, {B: 1}))]
    csys = compile_system(PSystem(tree, rules))
    tr = run(csys, max_steps=3, initial={"p": {X: 2}})
    # Child charge flip caps the rule at one application despite x^2.
    assert tr.fired("open", 1) == 1
    assert tr.final.charge("q") == PLUS
    assert read_region(tr.final, "q").counts == {A: 1, B: 1}
    # Second application blocked: child now ^+ but pattern wants ^0.
    assert tr.steps == 1


def test_out_consumption_reaches_parent_region():
    tree = MembraneNode("p", contents=Multiset({X: 3}), children=[
        MembraneNode("q")])
    rules = [RuleSpec(id="pull", target="q",
                      consume_out={X: 1}, produce_in={B: 1})]
    tr = run(compile_system(PSystem(tree, rules)), max_steps=2)
    assert tr.fired("pull", 1) == 3
    assert read_region(tr.final, "q").counts == {B: 3}
    assert read_region(tr.final, "p").counts == {}


def test_skin_out_production_lands_in_environment():
    tree = MembraneNode("s", contents=Multiset({A: 2}))
    rules = [RuleSpec(id="emit", target="s", consume_in={A: 1},
                      produce_out={Y: 1})]
    tr = run(compile_system(PSystem(tree, rules)), max_steps=2)
    assert read_region(tr.final, ENV_LABEL).counts == {Y: 2}


# ============================================================
# Traces, replay, determinism
# ============================================================


def loopy_system():
    tree = MembraneNode("s", contents=Multiset({A: 6, X: 1}), children=[
        MembraneNode("t", contents=Multiset({B: 2}))])
    rules = [
        RuleSpec(id="r1", target="s", consume_in={A: 2}, produce_in={C: 1}),
        RuleSpec(id="r2", target="s", pre=NEUTRAL, post=PLUS,
                 consume_in={X: 1}, produce_in={Y: 1}),
        RuleSpec(id="r3", target="s", pre=PLUS, post=PLUS,
                 consume_in={C: 1}, produce_out={C: 1}),
        RuleSpec(id="r4", target="t", consume_in={B: 1}, produce_out={D: 1}),
        RuleSpec(id="r5", target="s", pre=PLUS, post=PLUS, consume_in={D: 1},
                 child=ChildPattern("t", NEUTRAL, MINUS, {}, {A: 1})),
    ]
    return PSystem(tree, rules, [("r2", "r1")])


def test_full_trace_replays_exactly():
    tr = run(compile_system(loopy_system()), max_steps=20, trace_mode="full")
    assert tr.halted
    assert replay_matches(tr)


def test_records_only_replay_via_apply_record():
    csys = compile_system(loopy_system())
    tr = run(csys, max_steps=20)
    cfg = csys.initial_configuration()
    for rec in tr.records:
        apply_record(cfg, rec)
    assert cfg.equal_state(tr.final)


def test_identical_runs_identical_traces():
    a = run(compile_system(loopy_system()), max_steps=20)
    b = run(compile_system(loopy_system()), max_steps=20)
    assert export_trace_text(a) == export_trace_text(b)


def test_trace_export_shape():
    tr = run(one_region([rule("r", consume_in={A: 1}, produce_in={B: 1})],
                        contents={A: 2}), max_steps=3)
    assert export_trace_text(tr) == "1 r@mx2\n"


def test_budget_exhaustion_reported():
    # a -> a spins forever.
    tr = run(one_region([rule("r", consume_in={A: 1}, produce_in={A: 1})],
                        contents={A: 1}), max_steps=7)
    assert not tr.halted
    assert tr.halt_reason == "budget"
    assert tr.steps == 7


def test_budget_equal_to_halt_is_still_quiescent():
    tr = run(one_region([rule("r", consume_in={A: 1}, produce_in={B: 1})],
                        contents={A: 1}), max_steps=1)
    assert tr.halted
    assert tr.halt_reason == "quiescent"


def test_initial_override_replaces_region():
    csys = one_region([rule("r", consume_in={A: 1}, produce_in={B: 1})],
                      contents={A: 5})
    tr = run(csys, max_steps=3, initial={"m": {A: 2, X: 1}})
    assert read_region(tr.final, "m").counts == {B: 2, X: 1}
    with pytest.raises(StructureError, match="unknown label"):
        run(csys, max_steps=1, initial={"zz": {A: 1}})


def test_read_region_base_filter():
    csys = one_region([rule("r", consume_in={A: 1},
                            produce_in={sym("pay", 1): 2, sym("pay", 2): 1,
                                        B: 1})], contents={A: 1})
    tr = run(csys, max_steps=2)
    pays = read_region(tr.final, "m", base="pay")
    assert pays.counts == {sym("pay", 1): 2, sym("pay", 2): 1}
    assert pays.total() == 3


# ============================================================
# Strict-mode ambiguity flags
# ============================================================


def test_incomparable_starvation_is_flagged():
    rules = [
        rule("eat", consume_in={A: 2}, produce_in={B: 1}),
        rule("also", consume_in={A: 2}, produce_in={C: 1}),
    ]
    tr = run(one_region(rules, (), {A: 3}), max_steps=3, strict=True)
    assert len(tr.ambiguities) == 1
    amb = tr.ambiguities[0]
    assert (amb.winner, amb.loser) == ("eat", "also")
    assert amb.symbol == A and amb.region == "m"


def test_prioritized_competition_is_not_flagged():
    rules = [
        rule("eat", consume_in={A: 2}, produce_in={B: 1}),
        rule("also", consume_in={A: 2}, produce_in={C: 1}),
    ]
    tr = run(one_region(rules, [("eat", "also")], {A: 3}), max_steps=3,
             strict=True)
    assert tr.ambiguities == []


def test_partial_share_is_not_flagged():
    # also still fires once; only full starvation is ambiguous.
    rules = [
        rule("eat", consume_in={A: 2}, produce_in={B: 1}),
        rule("also", consume_in={A: 1}, produce_in={C: 1}),
    ]
    tr = run(one_region(rules, (), {A: 3}), max_steps=3, strict=True)
    assert tr.fired("also", 1) == 1
    assert tr.ambiguities == []


# ============================================================
# Structural validation
# ============================================================


def test_duplicate_membrane_label_rejected():
    tree = MembraneNode("s", children=[MembraneNode("s")])
    with pytest.raises(StructureError, match="duplicate membrane"):
        compile_system(PSystem(tree, []))


def test_env_label_reserved():
    with pytest.raises(StructureError, match="reserved"):
        compile_system(PSystem(MembraneNode(ENV_LABEL), []))


def test_duplicate_rule_id_rejected():
    rules = [rule("r", consume_in={A: 1}), rule("r", consume_in={B: 1})]
    with pytest.raises(StructureError, match="duplicate rule id"):
        one_region(rules)


def test_consume_nothing_rejected():
    with pytest.raises(StructureError, match="consumes nothing"):
        one_region([rule("r", produce_in={A: 1})])


def test_unknown_target_rejected():
    with pytest.raises(StructureError, match="unknown label"):
        one_region([RuleSpec(id="r", target="nope", consume_in={A: 1})])


def test_child_must_be_direct_child():
    tree = MembraneNode("p", children=[
        MembraneNode("q", children=[MembraneNode("r")])])
    bad = RuleSpec(id="x", target="p", consume_in={A: 1},
                   child=ChildPattern("r", NEUTRAL, NEUTRAL, {B: 1}, {}))
    with pytest.raises(StructureError, match="not a child"):
        compile_system(PSystem(tree, [bad]))


def test_priority_cycle_rejected():
    rules = [rule("a1", consume_in={A: 1}), rule("b1", consume_in={B: 1})]
    with pytest.raises(StructureError, match="cycle"):
        one_region(rules, [("a1", "b1"), ("b1", "a1")])


def test_priority_reflexive_rejected():
    with pytest.raises(StructureError, match="reflexive"):
        one_region([rule("a1", consume_in={A: 1})], [("a1", "a1")])


def test_priority_unknown_rule_rejected():
    with pytest.raises(StructureError, match="unknown rule"):
        one_region([rule("a1", consume_in={A: 1})], [("a1", "zz")])


def test_kahn_order_respects_declaration_rank():
    rules = [rule(f"r{i}", consume_in={A: 1}) for i in range(5)]
    csys = one_region(rules, [("r3", "r0")])
    order = [c.id for c in csys.ordered]
    # r3 must precede r0; everything else keeps declaration order.
    assert order == ["r1", "r2", "r3", "r0", "r4"]
