import pytest

from msr2io import bundled_model
from msr2io.msr import FR, IN, OUT, trace_set
from msr2io.oracle import chain_universe
from msr2io.terms import App, Fresh, Var
from msr2io.transform import (
    build_interface,
    compose,
    env_component,
    gen_env_rules,
    rid_instances,
    role_component,
    split_io,
    split_to_json,
)


def test_attacker_rule_count_and_closures(dh):
    rules = gen_env_rules(dh.theory)
    assert len(rules) == 4 + len(dh.theory.symbols) + 1 == 13
    closures = {r.rhs[0].args[0].fn: r for r in rules if r.origin == "md-closure"}
    assert set(closures) == set(dh.theory.symbols)
    for sym, r in closures.items():
        arity = dh.theory.symbols[sym].arity
        assert len(r.lhs) == arity and all(f.name == "K" for f in r.lhs)
        assert r.rhs[0].args[0] == App(sym, tuple(f.args[0] for f in r.lhs))
    assert [r.id for r in rules if r.origin == "fresh"] == ["Fresh"]


def test_interface_has_one_io_rule_per_fact_and_role(dh):
    intf = build_interface(dh)
    assert sum(len(v) for v in intf.io_rules.values()) == 8
    assert intf.in_facts == [FR, IN] and intf.out_facts == [OUT]
    for role, rules in intf.io_rules.items():
        for r in rules:
            if r.origin == "io-in":
                (src,), (buf,) = r.lhs, r.rhs
                assert buf.name == intf.buffers[role][src.name]
                assert buf.args[1:] == src.args
            elif r.origin == "io-out":
                (buf,), (dst,) = r.lhs, r.rhs
                assert buf.name == intf.buffers[role][dst.name]


def test_role_rules_only_touch_buffers(dh):
    intf = build_interface(dh)
    for role, rules in intf.role_rules.items():
        for r in rules:
            names = {f.name for f in r.lhs + r.rhs}
            assert not names & {FR, IN, OUT}


def test_split_halves_share_sync_labels(dh_split):
    for name, s in dh_split.sync.items():
        role_side = [r for r in dh_split.roles[s.role] if any(f.name == name for f in r.label)]
        env_side = [r for r in dh_split.env if any(f.name == name for f in r.label)]
        assert len(role_side) == 1 and len(env_side) == 1
        assert role_side[0].id == f"{s.rule}_role" and env_side[0].id == f"{s.rule}_env"


def test_components_share_no_fact_symbol(dh_split):
    env_syms = {f.name for r in dh_split.env for f in r.lhs + r.rhs}
    for role, rules in dh_split.roles.items():
        assert not {f.name for r in rules for f in r.lhs + r.rhs} & env_syms


def test_transform_is_deterministic(dh):
    a = split_to_json(split_io(build_interface(dh)))
    b = split_to_json(split_io(build_interface(bundled_model("dh"))))
    assert a == b


def test_rid_instances():
    rids = rid_instances({"Alice": 2, "Bob": 1})
    assert [r for r, _ in rids] == ["Alice", "Alice", "Bob"]
    assert len({n for _, n in rids}) == 3 and all(type(n) is Fresh for _, n in rids)


def test_composition_traces_are_interface_traces(dh, dh_split):
    from msr2io.msr import model_lts

    rids = rid_instances({"Alice": 1, "Bob": 1})
    u = chain_universe(dh, rids)
    comps = [(r, rid, role_component(dh_split, r, rid, u)) for r, rid in rids]
    left = trace_set(compose(comps, env_component(dh_split, u), dh_split.sync), 3)
    right = trace_set(model_lts(dh_split.intf.model, u, "eq"), 3)
    assert left <= right
    assert len(left) > 1


def test_role_component_fixes_thread_id(dh, dh_split):
    rid = Fresh("rid_Alice_1")
    lts = role_component(dh_split, "Alice", rid, chain_universe(dh, [("Alice", rid)]))
    rids = {f.args[0] for r in lts.rules for f in r.lhs + r.label + r.rhs if f.args and isinstance(f.args[0], (Fresh, Var))}
    assert Var("rid", "fresh") not in rids
