"""Rendering of I/O specifications into verifier-flavored text.

Two flavors are produced: one shaped like Gobra (Go) annotations and one
shaped like VeriFast (Java) annotations.  Neither is meant to typecheck;
the text mirrors the clause structure of the IR so that every clause has
exactly one permission predicate ``e_<rule>`` and one conjunct
``phi_<rule>`` of the role predicate.  Output depends only on the IR and
is byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

from .iospec import Clause, IoSpec, spec_to_json
from .terms import Fresh, Pub, Term, Var, variables

__all__ = ["Profile", "PROFILES", "render", "render_spec", "render_lemmas", "permission_names"]


@dataclass(frozen=True)
class Profile:
    flavor: str  # "gobra", "verifast" or "ir-json"
    extension: str
    lemma_extension: str = ""


PROFILES = {
    "gobra": Profile("gobra", "gobra.txt", "gobra.txt"),
    "verifast": Profile("verifast", "verifast.txt", "java.txt"),
    "ir-json": Profile("ir-json", "iospec.json"),
}


def term_text(t: Term) -> str:
    if type(t) is Var:
        return "_" if t.name.startswith("_") else t.name
    if type(t) is Pub:
        return f'pub("{t.name}")'
    if type(t) is Fresh:
        return f'fresh("{t.name}")'
    return f"{t.fn}({', '.join(term_text(a) for a in t.args)})"


def fact_text(f) -> str:
    return f"{f.name}({', '.join(term_text(a) for a in f.args)})"


def permission_names(spec: IoSpec) -> list[str]:
    return [f"e_{c.rule}" for c in spec.clauses]


def _vars_of(c: Clause) -> list[str]:
    return [v.name for v in c.vars]


def _guard_text(c: Clause) -> list[str]:
    ops = {"eq": "==", "neq": "!="}
    return [f"{term_text(a)} {ops[op]} {term_text(b)}" for op, a, b in c.guard]


# -- gobra flavor ---------------------------------------------------------------


def _gobra_mset(facts) -> str:
    return "mset[Fact]{" + ", ".join(fact_text(f) for f in facts) + "}"


def _gobra_perm_decl(c: Clause) -> str:
    params = ["ghost p Place", "ghost rid Term"] + [f"ghost {v} Term" for v in _vars_of(c)]
    if c.kind == "internal":
        params += ["ghost l mset[Fact]", "ghost a mset[Fact]", "ghost r mset[Fact]"]
    params.append("ghost pp Place")
    return f"pred e_{c.rule}({', '.join(params)})"


def _gobra_clause(spec: IoSpec, c: Clause) -> list[str]:
    P = f"P_{spec.role}"
    head = f"pred phi_{c.rule}(ghost p Place, ghost rid Term, ghost s mset[Fact]) {{"
    args = ", ".join(["p", "rid"] + _vars_of(c))
    vs = ", ".join(_vars_of(c))
    if c.kind == "internal":
        binders = (f"{vs} Term, " if vs else "") + "l, a, r mset[Fact]"
        conds = [
            "M(l, s)",
            f"l == {_gobra_mset(c.lhs)}",
            f"a == {_gobra_mset(c.label)}",
            f"r == {_gobra_mset(c.rhs)}",
        ] + _guard_text(c)
        body = [
            f"\t// {c.kind} {c.rule}",
            f"\tforall {binders} ::",
            "\t\t" + " &&\n\t\t".join(conds) + " ==>",
            f"\t\texists pp Place :: e_{c.rule}({args}, l, a, r, pp) && {P}(pp, rid, U(l, r, s))",
        ]
    elif c.kind == "output":
        f = c.lhs[0]
        body = [
            f"\t// {c.kind} {c.rule}",
            f"\tforall {vs} Term :: {fact_text(f)} in s ==>",
            f"\t\texists pp Place :: e_{c.rule}({args}, pp) && {P}(pp, rid, s setminus {_gobra_mset([f])})",
        ]
    else:
        f = c.rhs[0]
        binders = "pp Place" + (f", {vs} Term" if vs else "")
        body = [
            f"\t// {c.kind} {c.rule}",
            f"\texists {binders} :: e_{c.rule}({args}, pp) && {P}(pp, rid, s union {_gobra_mset([f])})",
        ]
    return [head] + body + ["}"]


def _render_gobra(spec: IoSpec) -> str:
    role = spec.role
    out = [
        f"// I/O specification for role {role} (gobra flavor, generated)",
        f"package {role.lower()}",
        "",
        "// places, tokens and the matching and update of states",
        "pred token(ghost p Place)",
        "ghost func M(l mset[Fact], s mset[Fact]) bool",
        "ghost func U(l mset[Fact], r mset[Fact], s mset[Fact]) mset[Fact]",
        "",
        "// permissions, one per clause",
    ]
    out += [_gobra_perm_decl(c) for c in spec.clauses]
    out += [
        "",
        f"pred psi_{role}(ghost rid Term) {{",
        f"\texists p Place :: token(p) && P_{role}(p, rid, mset[Fact]{{}})",
        "}",
        "",
        f"pred P_{role}(ghost p Place, ghost rid Term, ghost s mset[Fact]) {{",
        "\t" + " &&\n\t".join(f"phi_{c.rule}(p, rid, s)" for c in spec.clauses),
        "}",
    ]
    for c in spec.clauses:
        out.append("")
        out += _gobra_clause(spec, c)
    return "\n".join(out) + "\n"


# -- verifast flavor -----------------------------------------------------------


def _vf_mset(facts) -> str:
    return "mset(" + ", ".join(fact_text(f) for f in facts) + ")"


def _vf_perm_decl(c: Clause) -> str:
    params = ["Place p", "Term rid"] + [f"Term {v}" for v in _vars_of(c)]
    if c.kind == "internal":
        params += ["list<Fact> l", "list<Fact> a", "list<Fact> r"]
    params.append("Place pp")
    return f"predicate e_{c.rule}({', '.join(params)});"


def _vf_clause(spec: IoSpec, c: Clause) -> list[str]:
    P = f"P_{spec.role}"
    head = f"predicate phi_{c.rule}(Place p, Term rid, list<Fact> s) ="
    args = ", ".join(["p", "rid"] + _vars_of(c))
    typed = ", ".join(f"Term {v}" for v in _vars_of(c))
    if c.kind == "internal":
        binders = (typed + "; " if typed else "") + "list<Fact> l, list<Fact> a, list<Fact> r"
        conds = [
            "M(l, s)",
            f"l == {_vf_mset(c.lhs)}",
            f"a == {_vf_mset(c.label)}",
            f"r == {_vf_mset(c.rhs)}",
        ] + _guard_text(c)
        return [
            f"// {c.kind} {c.rule}",
            head,
            f"    [forall {binders}]",
            "    " + " &&\n    ".join(conds),
            f"    ? e_{c.rule}({args}, l, a, r, ?pp) &*& {P}(pp, rid, U(l, r, s))",
            "    : true;",
        ]
    if c.kind == "output":
        f = c.lhs[0]
        return [
            f"// {c.kind} {c.rule}",
            head,
            f"    [forall {typed}]",
            f"    mem({fact_text(f)}, s) == true",
            f"    ? e_{c.rule}({args}, ?pp) &*& {P}(pp, rid, remove({fact_text(f)}, s))",
            "    : true;",
        ]
    f = c.rhs[0]
    return [
        f"// {c.kind} {c.rule}",
        head,
        f"    e_{c.rule}(p, rid, " + "".join(f"?{v}, " for v in _vars_of(c)) + f"?pp) &*& {P}(pp, rid, cons({fact_text(f)}, s));",
    ]


def _render_verifast(spec: IoSpec) -> str:
    role = spec.role
    out = [
        "/*@",
        f"// I/O specification for role {role} (verifast flavor, generated)",
        "",
        "predicate token(Place p);",
        "fixpoint bool M(list<Fact> l, list<Fact> s);",
        "fixpoint list<Fact> U(list<Fact> l, list<Fact> r, list<Fact> s);",
        "",
        "// permissions, one per clause",
    ]
    out += [_vf_perm_decl(c) for c in spec.clauses]
    out += [
        "",
        f"predicate psi_{role}(Term rid) = token(?p) &*& P_{role}(p, rid, nil);",
        "",
        f"predicate P_{role}(Place p, Term rid, list<Fact> s) =",
        "    " + " &*&\n    ".join(f"phi_{c.rule}(p, rid, s)" for c in spec.clauses) + ";",
    ]
    for c in spec.clauses:
        out.append("")
        out += _vf_clause(spec, c)
    out.append("@*/")
    return "\n".join(out) + "\n"


# -- pattern lemmas ----------------------------------------------------------------


def _lemma_context(spec: IoSpec, ob):
    from .transform import buffer_name

    c = spec.clause(ob.subject[0])
    inbuf = buffer_name("In", spec.role)
    facts = [f for f in c.lhs if f.name != inbuf]
    bound = set()
    for f in facts:
        for a in f.args:
            bound |= variables(a)
    pattern = ob.term
    bound |= {v for v in variables(pattern) if v.name in ob.params}
    params = [v for v in c.vars if v in bound]
    exists = sorted(
        (v for v in variables(pattern) if v not in bound and v.name != "rid" and not v.name.startswith("_")),
        key=lambda v: v.name,
    )
    return facts, params, pattern, exists


def render_lemmas(spec: IoSpec, obligations, flavor: str) -> str:
    """Ghost-lemma stubs, one per pattern-requirement obligation of ``spec``."""
    obs = [o for o in obligations if o.kind == "PatternRequirement" and o.role == spec.role]
    role = spec.role
    out = []
    if flavor == "gobra":
        out.append(f"// pattern requirement lemmas for role {role} (gobra flavor, generated)")
    else:
        out += ["/*@", f"// pattern requirement lemmas for role {role} (verifast flavor, generated)"]
    for i, o in enumerate(obs, 1):
        facts, params, pattern, exists = _lemma_context(spec, o)
        pat = term_text(pattern)
        ex = ", ".join(v.name for v in exists)
        out.append("")
        out.append(f"// {o.subject[0]}: {o.status}" + (f" ({o.detail})" if o.detail else ""))
        if flavor == "gobra":
            state = "".join(f" && {fact_text(f)} in s" for f in facts)
            pre = f"exists {ex} Term :: gamma({pat}) == gamma(m)" if ex else f"gamma({pat}) == gamma(m)"
            post = f"exists {ex} Term :: m == {pat}" if ex else f"m == {pat}"
            args = ["m Term", "ghost p Place", "ghost rid Term", "ghost s mset[Fact]"] + [f"{v.name} Term" for v in params]
            out += [
                "ghost",
                f"requires token(p) && P_{role}(p, rid, s){state}",
                f"requires {pre}",
                f"ensures token(p) && P_{role}(p, rid, s)",
                f"ensures {post}",
                "decreases",
                f"func PaR_{role}_{i}({', '.join(args)})",
            ]
        else:
            state = "".join(f" &*& mem({fact_text(f)}, s) == true" for f in facts)
            q = f"[exists {', '.join('Term ' + v.name for v in exists)}] " if exists else ""
            args = ["Term m", "Place p", "Term rid", "list<Fact> s"] + [f"Term {v.name}" for v in params]
            out += [
                f"lemma void PaR_{role}_{i}({', '.join(args)})",
                f"    requires token(p) &*& P_{role}(p, rid, s){state} &*& {q}gamma({pat}) == gamma(m);",
                f"    ensures token(p) &*& P_{role}(p, rid, s) &*& {q}m == {pat};",
                "{",
                "    assume(false);",
                "}",
            ]
    if flavor != "gobra":
        out.append("@*/")
    return "\n".join(out) + "\n"


def render_spec(spec: IoSpec, flavor: str) -> str:
    if flavor == "gobra":
        return _render_gobra(spec)
    if flavor == "verifast":
        return _render_verifast(spec)
    if flavor == "ir-json":
        return spec_to_json(spec)
    raise ValueError(f"unknown flavor {flavor!r}")


def render(spec: IoSpec, obligations=(), profile: Profile | str = "gobra") -> dict[str, str]:
    """File name to text for one role and one flavor."""
    if isinstance(profile, str):
        profile = PROFILES[profile]
    stem = spec.role.lower()
    files = {f"{stem}.{profile.extension}": render_spec(spec, profile.flavor)}
    if profile.lemma_extension:
        files[f"{stem}_pattern_lemmas.{profile.lemma_extension}"] = render_lemmas(spec, obligations, profile.flavor)
    return files
