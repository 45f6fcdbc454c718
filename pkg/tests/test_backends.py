import re

import pytest

from msr2io import bundled_model
from msr2io.backends import PROFILES, permission_names, render, render_spec
from msr2io.bytestrings import Algebra, emit_pattern_obligations
from msr2io.iospec import gen_iospec, spec_from_json
from msr2io.transform import build_interface, split_io

from conftest import GOLDEN


def _setup(name):
    model = bundled_model(name)
    split = split_io(build_interface(model))
    alg = Algebra.of_model(model)
    specs = {r: gen_iospec(split, r) for r in sorted(split.roles)}
    obs = {r: emit_pattern_obligations(s, alg) for r, s in specs.items()}
    return specs, obs


@pytest.fixture(scope="module")
def dh_specs():
    return _setup("dh")


@pytest.mark.parametrize("flavor", ["gobra", "verifast"])
@pytest.mark.parametrize("role", ["Alice", "Bob"])
def test_golden_files(dh_specs, flavor, role):
    specs, obs = dh_specs
    for name, text in render(specs[role], obs[role], flavor).items():
        assert text == (GOLDEN / "dh" / flavor / name).read_text(), name


@pytest.mark.parametrize("role", ["Alice", "Bob"])
def test_ir_json_golden_and_round_trip(dh_specs, role):
    specs, _ = dh_specs
    (text,) = render(specs[role], (), "ir-json").values()
    assert text == (GOLDEN / "dh" / f"{role.lower()}.iospec.json").read_text()
    assert spec_from_json(text) == specs[role]


@pytest.mark.parametrize("model", ["dh", "wg_handshake", "eq_fixture"])
@pytest.mark.parametrize("flavor", ["gobra", "verifast"])
def test_permission_declarations_match_clauses(model, flavor):
    specs, _ = _setup(model)
    for spec in specs.values():
        text = render_spec(spec, flavor)
        declared = re.findall(r"^pred(?:icate)? (e_\w+)\(", text, re.M)
        assert declared == permission_names(spec)
        assert len(declared) == len(spec.clauses)
        # every name used in the text is one of the IR's permissions
        used = set(re.findall(r"\b(e_\w+)\(", text))
        assert used == set(permission_names(spec))
        for name in permission_names(spec):
            conj = name.replace("e_", "phi_", 1)
            assert len(re.findall(rf"\b{conj}\(p, rid, s\)", text)) == 1


def test_alice2_clause_structure(dh_specs):
    specs, _ = dh_specs
    text = render_spec(specs["Alice"], "gobra")
    body = text[text.index("pred phi_Alice2(") :]
    body = body[: body.index("\n}\n")]
    assert "M(l, s)" in body
    assert "a == mset[Fact]{Secret(exp(Y, x))}" in body
    assert "P_Alice(pp, rid, U(l, r, s))" in body
    assert "In_Alice(rid, sign(msg2(" in body


def test_lemma_stubs_one_per_pattern_obligation(dh_specs):
    specs, obs = dh_specs
    files = render(specs["Bob"], obs["Bob"], "gobra")
    lemmas = files["bob_pattern_lemmas.gobra.txt"]
    assert len(re.findall(r"^func PaR_Bob_\d+\(", lemmas, re.M)) == len(obs["Bob"]) == 2
    vf = render(specs["Bob"], obs["Bob"], "verifast")["bob_pattern_lemmas.java.txt"]
    assert len(re.findall(r"^lemma void PaR_Bob_\d+\(", vf, re.M)) == 2


def test_rendering_is_deterministic():
    a, oa = _setup("wg_handshake")
    b, ob = _setup("wg_handshake")
    for role in a:
        for fl in PROFILES:
            assert render(a[role], oa[role], fl) == render(b[role], ob[role], fl)


def test_unknown_flavor(dh_specs):
    with pytest.raises(ValueError):
        render_spec(dh_specs[0]["Alice"], "coq")
