import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msr2io import bundled_model
from msr2io.bytestrings import (
    NO_MATCH,
    Algebra,
    EncodingError,
    Field,
    FormatSpec,
    NamePolicy,
    UnmappedSymbol,
    check_image_disjointness,
    check_pattern_injectivity,
    collision_freedom,
    collision_search,
    emit_pattern_obligations,
    gamma,
    match_sequential,
    parse_format,
    split_nonlinear,
)
from msr2io.iospec import gen_iospec
from msr2io.terms import App, Fresh, Pub, Var, depth, enumerate_ground, substitute, variables
from msr2io.transform import build_interface, split_io

from conftest import G, fixture_model, small_theory

FMT = FormatSpec("m", b"\x07", (Field("a", "fixed", 2), Field("b", "var", 2), Field("c", "raw")))


def _specs(model):
    split = split_io(build_interface(model))
    return {r: gen_iospec(split, r) for r in sorted(split.roles)}


@pytest.fixture(scope="module")
def dh_alg(dh):
    return Algebra.of_model(dh)


# -- formats -----------------------------------------------------------------------


@settings(max_examples=200)
@given(st.binary(min_size=2, max_size=2), st.binary(max_size=40), st.binary(max_size=40))
def test_format_round_trip(a, b, c):
    enc = FMT.encode([a, b, c])
    assert FMT.splits(enc) == [(a, b, c)]
    assert parse_format(FMT, enc) == [a, b, c]
    assert FMT.min_len <= len(enc)


@pytest.mark.parametrize(
    "data",
    [b"", b"\x08ab\x00\x00", b"\x07a", b"\x07ab\x00\x05xy", b"\x07ab\x00"],
)
def test_format_no_match(data):
    assert parse_format(FMT, data) is NO_MATCH


def test_fixed_width_mismatch_raises():
    with pytest.raises(EncodingError):
        FMT.encode([b"abc", b"", b""])
    with pytest.raises(EncodingError):
        FMT.encode([b"ab", b""])


def test_unambiguous_layouts():
    assert FMT.unambiguous
    two_raw = FormatSpec("n", b"\x01", (Field("x", "raw"), Field("y", "raw")))
    assert not two_raw.unambiguous and len(two_raw.splits(b"\x01abc")) == 4
    raw_then_fixed = FormatSpec("n", b"\x01", (Field("x", "raw"), Field("y", "fixed", 1)))
    assert raw_then_fixed.unambiguous and raw_then_fixed.splits(b"\x01abc") == [(b"ab", b"c")]
    with pytest.raises(ValueError):
        Field("x", "var", 0)


def test_unmapped_symbol(dh_alg):
    with pytest.raises(UnmappedSymbol):
        dh_alg.apply("nope", [])
    with pytest.raises(EncodingError):
        gamma(Var("x"), dh_alg)
    with pytest.raises(EncodingError):
        gamma(Pub("bad\nname"), dh_alg)


# -- the reference algebra ------------------------------------------------------------


def _random_ground(rng, th, pool, d):
    syms = [s for s in th.symbols.values() if th.symbols[s.name].kind not in ("format", "destructor")]
    if d == 0 or rng.random() < 0.3:
        atoms = list(pool) + [App(s.name) for s in syms if s.arity == 0]
        return rng.choice(atoms)
    s = rng.choice([s for s in syms if s.arity > 0])
    return App(s.name, tuple(_random_ground(rng, th, pool, d - 1) for _ in range(s.arity)))


POOL = (Fresh("n1"), Fresh("n2"), Pub("a"), Pub("b"))


def _laws(model):
    """Declared equations plus the exponent law, as (lhs, rhs) term pairs."""
    th = model.theory
    laws = [(eq.lhs, eq.rhs) for eq in th.rules]
    if th.exp:
        b, x, y = Var("b"), Var("x"), Var("y")
        e = lambda s, t: App(th.exp, (s, t))  # noqa: E731
        laws.append((e(e(b, x), y), e(e(b, y), x)))
    return laws


def gamma_failures(name, per_law=1000, seed=7):
    """Failures per law over random ground instantiations, in declaration order."""
    model = bundled_model(name)
    alg = Algebra.of_model(model)
    rng = random.Random(seed)
    out = []
    for lhs, rhs in _laws(model):
        failures = 0
        for _ in range(per_law):
            sigma = {v: _random_ground(rng, model.theory, POOL, 2) for v in variables(lhs)}
            if gamma(substitute(lhs, sigma), alg) != gamma(substitute(rhs, sigma), alg):
                failures += 1
        out.append(failures)
    return out


@pytest.mark.parametrize("name", ["dh", "wg_handshake"])
def test_gamma_is_a_homomorphism_on_every_equation(name):
    failures = gamma_failures(name)
    assert failures and failures == [0] * len(failures)


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_gamma_respects_normal_forms(rnd):
    model = bundled_model("dh")
    alg = Algebra.of_model(model)
    t = _random_ground(rnd, model.theory, POOL, 3)
    assert gamma(t, alg) == gamma(model.theory.normalize(t), alg)


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_parse_inverts_gamma(rnd):
    model = bundled_model("dh")
    alg = Algebra.of_model(model)
    t = model.theory.normalize(_random_ground(rnd, model.theory, POOL, 2))
    assert t in alg.parse_terms(gamma(t, alg), max_depth=depth(t))


def test_format_terms_encode_by_layout(dh_alg):
    t = App("msg2", (Pub("0"), Pub("b"), Pub("a"), G, Fresh("n1")))
    b = gamma(t, dh_alg)
    assert b[:2] == b"\x000"
    assert dh_alg.parse_terms(b, 2) == {t}


# -- obligations ------------------------------------------------------------------------


def test_image_disjointness_dh(dh_alg):
    obs = {o.subject: o.status for o in check_image_disjointness(dh_alg)}
    assert obs[("names", "names")] == "assumed-crypto"
    assert obs[("msg2", "msg3")] == "proved-format"
    assert obs[("msg2", "names")] == "proved-format"
    assert obs[("pk", "sign")] == "assumed-crypto"
    n = len(dh_alg.symbols)
    assert len(obs) == 1 + n + n * (n - 1) // 2


def test_name_policy_controls_name_disjointness(dh_alg):
    short = NamePolicy(pub_max_len=2)
    fmt = FormatSpec("w", b"A", (Field("x", "fixed", 8),))
    assert not NamePolicy().excluded_by(fmt)
    assert short.excluded_by(fmt)


def test_pattern_injectivity(dh_alg):
    t = App("sign", (App("msg2", (Pub("0"), Var("B"), Var("A"), Var("X"), Var("Y"))), Var("k")))
    obs = {o.subject[0]: o.status for o in check_pattern_injectivity(t, dh_alg)}
    assert obs == {"sign": "assumed-crypto", "msg2": "proved-format"}
    amb = Algebra.of_model(fixture_model("ambiguous.msr"))
    (ob,) = check_pattern_injectivity(App("note", (Pub("hdr"), Var("X"))), amb)
    assert ob.status == "failed"


def test_dh_pattern_obligations(dh):
    specs = _specs(dh)
    alg = Algebra.of_model(dh)
    (alice,) = emit_pattern_obligations(specs["Alice"], alg)
    assert alice.subject == ("Alice2",) and alice.status == "proved-with-crypto-assumptions"
    bob = emit_pattern_obligations(specs["Bob"], alg)
    assert [(o.subject, o.status) for o in bob] == [
        (("Bob1",), "proved-format"),
        (("Bob2",), "proved-with-crypto-assumptions"),
    ]
    assert collision_freedom(specs["Alice"]).status == "assumed"


def test_wg_nonlinear_patterns_give_six_obligations():
    model = bundled_model("wg_handshake")
    alg = Algebra.of_model(model)
    obs = [o for spec in _specs(model).values() for o in emit_pattern_obligations(spec, alg)]
    assert len(obs) == 6
    assert all(o.kind == "PatternRequirement" for o in obs)
    assert {o.status for o in obs} == {"proved-with-crypto-assumptions"}
    # each non-linear input pattern is split in two
    assert sorted(o.subject[0] for o in obs) == ["Init2", "Init2", "Resp1", "Resp1", "Resp2", "Resp2"]


def test_ambiguous_format_fails_its_pattern_requirement():
    model = fixture_model("ambiguous.msr")
    obs = emit_pattern_obligations(_specs(model)["Receiver"], Algebra.of_model(model))
    assert [o.status for o in obs] == ["failed"]


# -- non-linear patterns -----------------------------------------------------------------


def _blanked(t):
    if isinstance(t, Var) and t.name.startswith("_"):
        return "_"
    if isinstance(t, App):
        return (t.fn,) + tuple(_blanked(a) for a in t.args)
    return t


def test_split_nonlinear_pair_example():
    x = Var("x")
    parts = split_nonlinear(App("pair", (x, App("h", (x,)))))
    assert [_blanked(p) for p in parts] == [("pair", x, "_"), ("pair", "_", ("h", x))]


def test_split_linear_pattern_is_unchanged():
    t = App("pair", (Var("x"), App("h", (Var("y"),))))
    assert split_nonlinear(t) == [t]
    assert split_nonlinear(App("pair", (Var("x"), Var("x"))), bound=[Var("x")]) == [App("pair", (Var("x"), Var("x")))]


@pytest.mark.parametrize(
    "pattern",
    [
        App("pair", (Var("x"), App("h", (Var("x"),)))),
        App("pair", (App("exp", (G, Var("x"))), App("pair", (Var("x"), Var("y"))))),
        App("pair", (Var("x"), App("pair", (Var("y"), App("h", (App("pair", (Var("x"), Var("y"))),)))))),
    ],
)
def test_split_patterns_match_like_the_original(pattern):
    th = small_theory()
    pool = (Fresh("a"), Fresh("b"), Pub("c"))
    domain = enumerate_ground(pool, th.symbols.values(), 1, th)
    parts = split_nonlinear(pattern)
    assert len(parts) > 1
    vs = sorted(variables(pattern), key=lambda v: v.name)
    rng = random.Random(3)
    msgs = []
    first = parts[0]
    blanks = sorted(variables(first) - set(vs), key=lambda v: v.name)
    for vals in itertools.islice(itertools.product(domain, repeat=len(vs)), 0, None, 7):
        sigma = dict(zip(vs, vals))
        msgs.append(th.normalize(substitute(pattern, sigma)))
        # fits the first part only: its blanks get unrelated values
        noise = {b: rng.choice(domain) for b in blanks}
        msgs.append(th.normalize(substitute(first, {**sigma, **noise})))
    key = lambda sols: {frozenset(s.items()) for s in sols}  # noqa: E731
    hits = 0
    for m in msgs:
        got = key(match_sequential(th, parts, m))
        assert got == key(th.match(pattern, m))
        hits += bool(got)
    assert 0 < hits < len(msgs)


# -- bounded collision search ----------------------------------------------------------------


def test_collision_search_finds_ambiguous_witness():
    model = fixture_model("ambiguous.msr")
    alg = Algebra.of_model(model)
    (ob,) = emit_pattern_obligations(_specs(model)["Receiver"], alg)
    hit = collision_search(alg, ob.term, [Fresh("n1"), Fresh("n2"), Pub("p1")], depth_bound=2)
    assert hit is not None
    m, sigma = hit
    inst = substitute(ob.term, sigma)
    assert gamma(m, alg) == gamma(inst, alg)
    assert model.theory.match(ob.term, m) == []
