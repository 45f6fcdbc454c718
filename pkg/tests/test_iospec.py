import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msr2io import bundled_model
from msr2io.iospec import (
    Clause,
    IoSpec,
    PermLabel,
    gen_iospec,
    pi,
    relabel_pi,
    spec_from_json,
    spec_lts,
    spec_to_json,
)
from msr2io.msr import Multiset, trace_set
from msr2io.oracle import chain_universe, input_universe
from msr2io.terms import App, Fresh, Pub, Var
from msr2io.transform import build_interface, rid_instances, split_io


@pytest.fixture(scope="module")
def specs(dh_split):
    return {r: gen_iospec(dh_split, r) for r in dh_split.roles}


@pytest.mark.parametrize("role", ["Alice", "Bob"])
def test_clause_counts(specs, role):
    spec = specs[role]
    assert len(spec.clauses) == 6
    assert (spec.count("internal"), spec.count("input"), spec.count("output")) == (2, 3, 1)
    assert [c.rule for c in spec.clauses] == sorted(c.rule for c in spec.clauses)
    (setup,) = [c for c in spec.clauses if c.setup]
    assert setup.kind == "input"


def test_alice2_clause_shape(specs):
    c = specs["Alice"].clause("Alice2")
    assert c.kind == "internal"
    assert [f.name for f in c.lhs] == ["Step1_Alice", "In_Alice"]
    assert [f.name for f in c.label] == ["Secret"]
    assert [f.name for f in c.rhs] == ["Step2_Alice", "Out_Alice"]
    assert c.rid not in c.vars


@pytest.mark.parametrize("name", ["dh", "dh_mutated", "dh_reveal", "eq_fixture", "wg_handshake"])
def test_json_round_trip(name):
    split = split_io(build_interface(bundled_model(name)))
    for role in split.roles:
        spec = gen_iospec(split, role)
        text = spec_to_json(spec)
        assert spec_from_json(text) == spec
        assert spec_to_json(spec_from_json(text)) == text


_leaf = st.sampled_from([Fresh("a"), Pub("b"), Var("x"), Var("k", "fresh")])
_terms = st.recursive(_leaf, lambda k: st.builds(lambda f, a, b: App(f, (a, b)), st.sampled_from(["f", "exp"]), k, k), max_leaves=5)


@settings(max_examples=100)
@given(st.lists(_terms, min_size=1, max_size=3))
def test_json_round_trip_arbitrary_terms(args):
    from msr2io.msr import Fact

    c = Clause("internal", "R", Var("rid", "fresh"), (), (Fact("S", tuple(args)),), (), (Fact("T", tuple(args), True),), (("eq", args[0], args[-1]),))
    spec = IoSpec("P", (c,))
    assert spec_from_json(spec_to_json(spec)) == spec


def test_unknown_clause_kind_rejected():
    with pytest.raises(ValueError):
        Clause("bogus", "R", Var("rid", "fresh"), (), (), (), ())


def test_pi_maps_io_labels_to_sync_facts():
    rid = Fresh("r")
    lab = PermLabel("io", "IO_Out_Alice_role", rid, (Pub("m"),), sync="Sync_Out_Alice")
    (f,) = pi(lab)
    assert f.name == "Sync_Out_Alice" and f.args == (rid, Pub("m"))
    assert relabel_pi((lab,)) == (Multiset([f]),)
    action = Multiset()
    assert pi(PermLabel("internal", "Alice1", rid, (), action)) == action


def test_spec_lts_relabeled_view_matches_pi(dh, dh_split, specs):
    rids = rid_instances({"Alice": 1})
    rid = rids[0][1]
    u = chain_universe(dh, rids)
    lts = spec_lts(specs["Alice"], rid, dh_split.theory, input_universe(u), dh_split.restrictions)
    direct = {relabel_pi(t) for t in trace_set(lts, 3)}
    viewed = trace_set(lts.relabeled(), 3)
    assert direct == viewed
    assert any(len(t) == 3 for t in direct)
