from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msr2io import bundled_model
from msr2io.msr import (
    EMPTY,
    Fact,
    Multiset,
    collision_free,
    filter_empty,
    model_lts,
    restrict_eq,
    trace_set,
    traces,
)
from msr2io.terms import Fresh, Pub

facts = st.builds(
    lambda n, a: Fact(n, (a,)),
    st.sampled_from(["A", "B", "C"]),
    st.sampled_from([Fresh("x"), Fresh("y"), Pub("z")]),
)
msets = st.lists(facts, max_size=6).map(Multiset)


@settings(max_examples=200)
@given(msets, msets)
def test_union_and_difference_agree_with_counter(a, b):
    ca, cb = a.counts, b.counts
    assert a.union(b).counts == dict(Counter(ca) + Counter(cb))
    assert a.difference(b).counts == dict(Counter(ca) - Counter(cb))
    assert a.difference(b).issubset(a)
    assert a.issubset(a.union(b))


@settings(max_examples=100)
@given(st.lists(facts, max_size=6), st.randoms())
def test_multiset_is_order_independent(fs, rnd):
    shuffled = list(fs)
    rnd.shuffle(shuffled)
    assert Multiset(fs) == Multiset(shuffled)
    assert hash(Multiset(fs)) == hash(Multiset(shuffled))


def test_multiset_counts_duplicates():
    f = Fact("A", (Fresh("x"),))
    m = Multiset([f, f])
    assert m.count(f) == 2 and len(m) == 2
    assert m.difference([f]).count(f) == 1
    assert Multiset([f]).difference([f, f]) == EMPTY


@pytest.fixture(scope="module")
def eq_model():
    return bundled_model("eq_fixture")


def test_depth_zero_has_only_the_empty_trace(eq_model):
    assert traces(eq_model, 0) == {()}
    with pytest.raises(ValueError):
        traces(eq_model, -1)


def test_traces_monotone_and_prefix_closed(eq_model):
    prev = None
    for d in range(5):
        ts = traces(eq_model, d, "eq")
        if prev is not None:
            assert prev <= ts
        assert all(t[:-1] in ts for t in ts if t)
        prev = ts


def test_eq_semantics_is_plain_intersected_with_restriction(eq_model):
    u = eq_model.universe()
    for d in range(5):
        plain = trace_set(model_lts(eq_model, u, "plain"), d)
        eq = trace_set(model_lts(eq_model, u, "eq"), d)
        assert eq == restrict_eq(plain, eq_model.restrictions, eq_model.theory)
    # the restriction does cut plain traces at this depth
    assert len(restrict_eq(plain, eq_model.restrictions, eq_model.theory)) < len(plain)


def test_lazy_attacker_matches_eager_construction(eq_model):
    u = eq_model.universe()
    for d in range(5):
        lazy = trace_set(model_lts(eq_model, u, "eq", lazy=True), d)
        eager = trace_set(model_lts(eq_model, u, "eq", lazy=False), d)
        assert lazy == eager


def test_unknown_semantics_rejected(eq_model):
    with pytest.raises(ValueError):
        model_lts(eq_model, eq_model.universe(), "bogus")


def test_collision_free_drops_repeated_fresh():
    lab = Multiset([Fact("Fresh", (Fresh("n1"),))])
    other = Multiset([Fact("Fresh", (Fresh("n2"),))])
    assert collision_free({(lab, lab), (lab, other)}) == {(lab, other)}
    assert filter_empty({(EMPTY, lab, EMPTY)}) == {(lab,)}


def _fire(lts, s, rule, pred=lambda t: True):
    (t,) = [t for t in lts.transitions(s) if t.rule == rule and pred(t)]
    return t


def test_fresh_labels_and_persistent_facts_are_read_not_consumed():
    m = bundled_model("dh")
    lts = model_lts(m, m.universe(), "eq", lazy=False)
    n1, n2 = Fresh("n1"), Fresh("n2")
    t = _fire(lts, lts.initial(), "Fresh", lambda t: n1 in next(iter(t.label)).args)
    assert [f.name for f in t.label] == ["Fresh"]
    t = _fire(lts, t.target, "KeyGen", lambda t: Pub("p1") in t.target.by_name["Ltk"][0].args)
    (ltk,) = t.target.by_name["Ltk"]
    assert ltk.persistent
    t = _fire(lts, t.target, "Fresh", lambda t: n2 in next(iter(t.label)).args)
    t = _fire(lts, t.target, "Setup_A")
    assert t.target.count(ltk) == 1
    assert "Setup_Alice" in t.target.names()
