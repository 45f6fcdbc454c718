import json

import pytest

from msr2io import bundled_model_text
from msr2io.cli import Config, UsageError, main

from conftest import FIXTURES, GOLDEN


@pytest.fixture
def models(tmp_path):
    out = {}
    for name in ("dh", "dh_mutated", "dh_reveal", "eq_fixture"):
        p = tmp_path / f"{name}.msr"
        p.write_text(bundled_model_text(name))
        out[name] = str(p)
    return out


def test_validate(models, capsys):
    assert main(["validate", models["dh"]]) == 0
    assert main(["validate", models["dh"], "--json-diagnostics"]) == 0
    assert json.loads(capsys.readouterr().out) == []


def test_validate_reports_diagnostics(capsys):
    path = str(FIXTURES / "assumptions" / "A5_fail.msr")
    assert main(["validate", path, "--json-diagnostics"]) == 3
    (d,) = json.loads(capsys.readouterr().out)
    assert d["assumption"] == "A5"


def test_syntax_error_exit_code(tmp_path):
    p = tmp_path / "bad.msr"
    p.write_text("model x\nrule R: [In(x)] --> [Out(x)")
    assert main(["validate", str(p)]) == 3


def test_usage_errors(models, tmp_path, capsys):
    assert main(["frobnicate", models["dh"]]) == 2
    assert main([]) == 2
    assert main(["check", models["dh"]]) == 2  # --claim is required
    assert main(["check", models["dh"], "--claim", "T1", "--role", "Carol"]) == 2
    assert main(["validate", str(tmp_path / "missing.msr")]) == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("depth = lots\n")
    assert main(["validate", models["dh"], "--config", str(cfg)]) == 2
    assert "usage" in capsys.readouterr().err


def test_config_parsing():
    cfg = Config.parse("# bounds\ndepth = 4\nsearch: directed\npar_search = yes\nroles = Alice:2,Bob\n")
    assert cfg.values == {"depth": 4, "search": "directed", "par_search": True, "roles": "Alice:2,Bob"}
    with pytest.raises(UsageError):
        Config.parse("colour = blue\n")
    with pytest.raises(UsageError):
        Config.parse("just words\n")


def test_transform_writes_canonical_json(models, tmp_path):
    out = tmp_path / "intf.json"
    assert main(["transform", models["dh"], "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc["split"]["roles"]) == {"Alice", "Bob"}
    assert len(doc["split"]["sync"]) == 8


def test_genspec_matches_goldens(models, tmp_path):
    assert main(["genspec", models["dh"], "--out-dir", str(tmp_path)]) == 0
    for p in (GOLDEN / "dh").rglob("*"):
        if p.is_file():
            rel = p.relative_to(GOLDEN / "dh")
            assert (tmp_path / rel).read_bytes() == p.read_bytes(), rel


def test_obligations_exit_codes(models, tmp_path):
    assert main(["obligations", models["dh"], "--out-dir", str(tmp_path)]) == 0
    table = (tmp_path / "obligations.txt").read_text()
    assert "PatternRequirement  Alice  Alice2" in table
    assert main(["obligations", str(FIXTURES / "ambiguous.msr")]) == 1


def test_obligations_collision_search_reports_witness(tmp_path):
    out = tmp_path / "o"
    assert main(["obligations", str(FIXTURES / "ambiguous.msr"), "--par-search", "--out-dir", str(out)]) == 1
    obs = json.loads((out / "obligations.json").read_text())
    (par,) = [o for o in obs if o["kind"] == "PatternRequirement"]
    assert par["status"] == "failed" and par["detail"].startswith("collision witness ")


def test_check_mutated_t1_writes_witness(models, tmp_path):
    rc = main(["check", models["dh"], "--claim", "T1", "--role", "Alice", "--impl", models["dh_mutated"],
               "--depth", "4", "--out-dir", str(tmp_path)])
    assert rc == 1
    witness = json.loads((tmp_path / "witness.json").read_text())["T1(Alice)"]
    assert len(witness) <= 4 and witness[-1][0].startswith("Sync_Out_Alice(")
    (v,) = json.loads((tmp_path / "verdicts.json").read_text())
    assert v["status"] == "counterexample" and "seconds" not in v["stats"]


def test_check_sec(models, capsys):
    assert main(["check", models["dh"], "--claim", "SEC", "--depth", "4"]) == 0
    (v,) = json.loads(capsys.readouterr().out)
    assert v["claim"] == "SEC" and v["status"] == "holds-at-bound"


def test_check_directed_without_attack_is_budget_exit(models, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("search = directed\nfresh = 3\nterm_depth = 3\n")
    assert main(["check", models["dh"], "--claim", "SEC", "--depth", "17", "--config", str(cfg)]) == 4


def test_check_reveal_counterexample(models, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("search = directed\nfresh = 3\nterm_depth = 3\nbudget = 3000000\n")
    rc = main(["check", models["dh_reveal"], "--claim", "SEC", "--depth", "17", "--config", str(cfg),
               "--witness", str(tmp_path / "w.json")])
    assert rc == 1
    (w,) = json.loads((tmp_path / "w.json").read_text()).values()
    assert w[-1][0].startswith("K(")


def test_check_agree_needs_config(models):
    assert main(["check", str(FIXTURES / "agree.msr"), "--claim", "AGREE"]) == 2


def test_check_agree(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("commit = Commit\nrunning = Running\npairs = 0:0\n")
    assert main(["check", str(FIXTURES / "agree_broken.msr"), "--claim", "AGREE", "--depth", "7",
                 "--config", str(cfg), "--witness", str(tmp_path / "w.json")]) == 1


def test_pipeline_is_byte_stable(models, tmp_path):
    trees = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["pipeline", models["dh"], "--out-dir", str(out), "--depth", "2"]) == 0
        trees.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    assert trees[0] == trees[1]
    names = {str(p) for p in trees[0]}
    assert {"intf.json", "alice.iospec.json", "bob.iospec.json", "obligations.json", "obligations.txt",
            "verdicts.json", "gobra/alice.gobra.txt", "verifast/bob.verifast.txt"} <= names
    verdicts = json.loads(trees[0][next(p for p in trees[0] if str(p) == "verdicts.json")])
    assert [v["claim"] for v in verdicts] == ["L1", "L2", "T1(Alice)", "T1(Bob)", "composed"]


def test_pipeline_fails_on_ambiguous_format(tmp_path):
    assert main(["pipeline", str(FIXTURES / "ambiguous.msr"), "--out-dir", str(tmp_path), "--depth", "1"]) == 1
