import pytest

from msr2io import bundled_model_text
from msr2io.frontend import ASSUMPTIONS, InvalidModel, ModelSyntaxError, load, parse, pretty, validate

from conftest import FIXTURES

BUNDLED = ["dh", "dh_mutated", "dh_reveal", "eq_fixture", "wg_handshake"]
ASSUMPTION_IDS = [f"A{i}" for i in range(1, 9)]


def diagnostics(text):
    res = validate(parse(text))
    return res if isinstance(res, list) else []


@pytest.mark.parametrize("a", ASSUMPTION_IDS)
def test_failing_fixture_reports_exactly_its_assumption(a):
    diags = diagnostics((FIXTURES / "assumptions" / f"{a}_fail.msr").read_text())
    assert [d.assumption for d in diags] == [a]
    assert diags[0].severity == "error"


@pytest.mark.parametrize("a", ASSUMPTION_IDS)
def test_passing_fixture_is_clean(a):
    assert diagnostics((FIXTURES / "assumptions" / f"{a}_pass.msr").read_text()) == []


def test_every_assumption_has_a_fixture_pair():
    names = {p.stem for p in (FIXTURES / "assumptions").glob("*.msr")}
    assert names == {f"{a}_{k}" for a in ASSUMPTION_IDS for k in ("fail", "pass")}
    assert set(ASSUMPTION_IDS) <= set(ASSUMPTIONS)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_models_validate_and_pretty_print_round_trips(name):
    text = bundled_model_text(name)
    first = pretty(parse(text))
    assert pretty(parse(first)) == first
    assert repr(load(first).rules) == repr(load(text).rules)


def test_syntax_error_carries_position():
    with pytest.raises(ModelSyntaxError) as e:
        parse("model x\nrule R: [In(x)] --> [Out(x)")
    assert e.value.line == 2


@pytest.mark.parametrize(
    "decl",
    ["facts\n  E/2 linear eq\nend\nrestriction E : lt\n", "facts\n  E/3 linear eq\nend\nrestriction E : eq\n"],
)
def test_unsupported_restrictions_rejected(decl):
    diags = diagnostics("model x\n" + decl)
    assert diags and all(d.assumption == "R1" for d in diags)


def test_load_raises_with_diagnostics():
    with pytest.raises(InvalidModel) as e:
        load((FIXTURES / "assumptions" / "A7_fail.msr").read_text())
    assert [d.assumption for d in e.value.diagnostics] == ["A7"]


def test_undeclared_fact_is_a_syntax_error():
    with pytest.raises(ModelSyntaxError, match="undeclared fact symbol"):
        parse("model x\nrule R: [In(x)] --> [Nope(x)]\n")


def test_diagnostic_json_shape():
    (d,) = diagnostics((FIXTURES / "assumptions" / "A4_fail.msr").read_text())
    j = d.to_json()
    assert j["assumption"] == "A4" and j["severity"] == "error"
    assert set(j) == {"severity", "assumption", "where", "message", "span"}


def test_role_thread_parameters_inferred(dh):
    assert dh.roles == {"Alice": 5, "Bob": 5}
