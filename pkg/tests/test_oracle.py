import pytest

from msr2io import bundled_model
from msr2io.iospec import gen_iospec, pi, spec_lts
from msr2io.msr import BudgetExceeded, Multiset, model_lts, trace_set
from msr2io.oracle import (
    Agreement,
    Secrecy,
    accepts,
    chain_universe,
    check_end_to_end,
    check_inclusion,
    check_l1,
    check_l2,
    check_property,
    check_t1,
    input_universe,
    replay_run,
)
from msr2io.transform import build_interface, rid_instances, role_component, split_io

from msr2io.frontend import load

from conftest import FIXTURES, fixture_model

RIDS = rid_instances({"Alice": 1, "Bob": 1})


@pytest.fixture(scope="module")
def u(dh):
    return chain_universe(dh, RIDS)


@pytest.fixture(scope="module")
def mutated_split():
    return split_io(build_interface(bundled_model("dh_mutated")))


def test_inclusion_is_reflexive(dh, u):
    lts = model_lts(dh, u, "eq")
    v = check_inclusion(lts, model_lts(dh, u, "eq"), 3)
    assert v.holds and v.stats["left_traces"] > 1


def test_depth_zero_holds_vacuously(dh, u):
    for v in check_end_to_end(dh, RIDS, 0, u):
        assert v.holds, v.claim


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_chain_links_hold_at_small_depth(dh, u, depth):
    verdicts = check_end_to_end(dh, RIDS, depth, u)
    assert [v.claim for v in verdicts] == ["L1", "L2", "T1(Alice)", "T1(Bob)", "composed"]
    assert all(v.holds for v in verdicts)
    assert all(v.bounds["fresh"] and v.depth == depth for v in verdicts)


def test_mutated_initiator_fails_t1_with_short_witness(dh_split, mutated_split, u):
    rid = RIDS[0][1]
    v = check_t1(dh_split, "Alice", rid, u, 4, impl_split=mutated_split)
    assert v.status == "counterexample"
    assert len(v.witness) <= 4
    (last,) = v.witness[-1]
    assert last.startswith("Sync_Out_Alice(")
    # the unmodified responder still refines its spec
    assert check_t1(dh_split, "Bob", RIDS[1][1], u, 4, impl_split=mutated_split).holds


def test_counterexample_is_minimal(dh_split, mutated_split, u):
    rid = RIDS[0][1]
    v = check_t1(dh_split, "Alice", rid, u, 4, impl_split=mutated_split)
    shorter = check_t1(dh_split, "Alice", rid, u, len(v.witness) - 1, impl_split=mutated_split)
    assert shorter.holds


def test_relabel_coherence(dh, dh_split, u):
    """relabel=pi on the spec LTS and the pre-relabeled view give one answer."""
    rid = RIDS[0][1]
    spec = gen_iospec(dh_split, "Alice")
    iu = input_universe(u)
    right = role_component(dh_split, "Alice", rid, u)
    lts = spec_lts(spec, rid, dh_split.theory, iu, dh_split.restrictions)
    a = check_inclusion(lts, right, 4, relabel=pi)
    b = check_inclusion(lts.relabeled(), role_component(dh_split, "Alice", rid, u), 4)
    assert a.holds == b.holds == True  # noqa: E712
    assert a.stats["left_traces"] == b.stats["left_traces"]


def test_monotone_in_depth(dh, dh_split, u):
    intf = dh_split.intf
    for d in range(4):
        assert check_l1(dh, intf, u, d).holds
        assert check_l2(dh_split, u, RIDS, d).holds


def test_inclusion_failure_witness_replays():
    m = bundled_model("eq_fixture")
    u = m.universe()
    pruned = bundled_model("eq_fixture")
    pruned.rules = [r for r in pruned.rules if r.id != "Check"]
    left = model_lts(m, u, "eq")
    v = check_inclusion(left, model_lts(pruned, u, "eq"), 5)
    assert v.status == "counterexample"
    assert any("Got(" in x for x in v.witness[-1])
    assert check_inclusion(left, model_lts(pruned, u, "eq"), len(v.witness) - 1).holds


def test_budget_exceeded(dh, u):
    with pytest.raises(BudgetExceeded):
        check_l1(dh, build_interface(dh), u, 4, cap=50)


# -- properties ------------------------------------------------------------------


def test_secrecy_holds_on_dh(dh):
    v = check_property(dh, Secrecy(), 6, dh.universe(2, 2, 2))
    assert v.holds and v.kind == "collision-free"
    assert v.bounds["term_depth"] == 2


def test_secrecy_needs_a_declared_action():
    m = bundled_model("eq_fixture")
    with pytest.raises(ValueError):
        check_property(m, Secrecy(), 2)


def test_model_without_secret_labels_holds_trivially():
    m = fixture_model("agree.msr")
    v = check_property(m, Secrecy("Running"), 4, m.universe(2, 1, 1))
    assert v.holds


def test_key_reveal_breaks_secrecy_with_replayable_witness():
    m = bundled_model("dh_reveal")
    u = m.universe(3, 2, 3)
    v = check_property(m, Secrecy(), 17, u, search="directed", budget=3_000_000)
    assert v.status == "counterexample"
    (secret,) = [f for f in v.witness[-2]]
    (known,) = v.witness[-1]
    assert secret.startswith("Secret(") and known == "K(" + secret[len("Secret(") :]
    # check_property replays the run in the eager model before reporting it
    assert v.bounds["search"] == "directed" and v.bounds["instances"] == 1


def test_directed_search_without_attack_gives_no_verdict(dh):
    with pytest.raises(BudgetExceeded):
        check_property(dh, Secrecy(), 17, dh.universe(3, 2, 3), search="directed", budget=3_000_000)


def test_unknown_search_mode(dh):
    with pytest.raises(ValueError):
        check_property(dh, Secrecy(), 2, search="random")


def test_agreement():
    prop = Agreement("Commit", "Running", ((0, 0),))
    ok = fixture_model("agree.msr")
    bad = fixture_model("agree_broken.msr")
    v = check_property(bad, prop, 7)
    assert v.status == "counterexample"
    assert v.witness[-1] == ["Commit('p1')"]
    assert check_property(ok, prop, 11, ok.universe(4, 1, 2)).holds
    # the same search does reach an honest commit when Running is not emitted
    text = (FIXTURES / "agree.msr").read_text().replace("--[Running(~n)]->", "-->")
    unlabeled = load(text)
    assert check_property(unlabeled, prop, 11, ok.universe(4, 1, 2)).status == "counterexample"
