"""Per-role I/O specifications and their operational reading.

A spec is a list of clauses, one per rule of the role's split rule set:
internal clauses apply a protocol rule to the abstract state, output
clauses spend a buffered output fact, input clauses add a buffered input
fact with existentially chosen arguments.  ``SpecLTS`` interprets a spec as
a guarded transition system whose states carry a single token (a place
counter) and a fact multiset.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .msr import EMPTY, Fact, Multiset, MsrLTS, Rule, Transition, Universe, match_args, show_fact
from .terms import App, Fresh, Pub, Term, Theory, Var, is_ground, show, substitute, term_key, variables
from .transform import SplitSystem, setup_name

__all__ = [
    "Clause",
    "IoSpec",
    "PermLabel",
    "SpecLTS",
    "SpecState",
    "gen_iospec",
    "input_seeds",
    "relabel_pi",
    "spec_from_json",
    "spec_lts",
    "spec_to_json",
]

KINDS = ("internal", "input", "output")


@dataclass(frozen=True)
class Clause:
    """One conjunct of the role predicate.

    ``rid`` is the variable standing for the thread id in this clause.  For
    I/O clauses ``fact`` is the buffered fact and ``sync`` the
    synchronization label; ``vars`` are the universally quantified
    variables (existential for input clauses).
    """

    kind: str
    rule: str
    rid: Term
    vars: tuple[Var, ...]
    lhs: tuple[Fact, ...]
    label: tuple[Fact, ...]
    rhs: tuple[Fact, ...]
    guard: tuple[tuple[str, Term, Term], ...] = ()
    fact: str | None = None
    sync: str | None = None
    setup: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown clause kind {self.kind!r}")


@dataclass(frozen=True)
class IoSpec:
    role: str
    clauses: tuple[Clause, ...]
    start: str = "p0"

    def clause(self, rule: str) -> Clause:
        for c in self.clauses:
            if c.rule == rule:
                return c
        raise KeyError(rule)

    def count(self, kind: str) -> int:
        return sum(1 for c in self.clauses if c.kind == kind)


def _rid_var(rule: Rule, split: SplitSystem, role: str) -> Term:
    for f in rule.lhs + rule.label + rule.rhs:
        s = split.facts.get(f.name)
        if s is not None and s.cls in ("state", "buffer", "sync") or f.name == setup_name(role):
            return f.args[0]
    raise ValueError(f"rule {rule.id} carries no thread id")


def gen_iospec(split: SplitSystem, role: str) -> IoSpec:
    """Clauses for ``role``, in rule-id order."""
    clauses = []
    for r in sorted(split.roles[role], key=lambda r: r.id):
        rid = _rid_var(r, split, role)
        if r.origin == "sync-in":
            (buf,) = r.rhs
            (lab,) = r.label
            zs = _ordered_vars(buf.args[1:])
            clauses.append(
                Clause("input", r.id, rid, zs, r.lhs, r.label, r.rhs, (), buf.name, lab.name, buf.name.startswith("Setup_"))
            )
        elif r.origin == "sync-out":
            (buf,) = r.lhs
            (lab,) = r.label
            xs = _ordered_vars(buf.args[1:])
            clauses.append(Clause("output", r.id, rid, xs, r.lhs, r.label, r.rhs, (), buf.name, lab.name))
        else:
            xs = tuple(v for v in _ordered_vars(a for f in r.lhs + r.label + r.rhs for a in f.args) if v != rid)
            clauses.append(Clause("internal", r.id, rid, xs, r.lhs, r.label, r.rhs, r.guard))
    return IoSpec(role, tuple(clauses))


def _ordered_vars(terms: Iterable[Term]) -> tuple[Var, ...]:
    out: dict[Var, None] = {}
    for t in terms:
        for v in sorted(variables(t), key=term_key):
            out.setdefault(v)
    return tuple(out)


# -- labels ------------------------------------------------------------------


@dataclass(frozen=True)
class PermLabel:
    """Label of a spec step.

    Internal steps record the rule, the instantiated variables and the
    instantiated action multiset; I/O steps record the synchronization
    label name, the thread id and the argument values.
    """

    kind: str  # "internal" or "io"
    rule: str
    rid: Term
    args: tuple[Term, ...]
    action: Multiset = EMPTY
    sync: str | None = None

    def __lt__(self, other: "PermLabel") -> bool:
        return self.sort_key < other.sort_key

    @property
    def sort_key(self) -> tuple:
        return (self.kind, self.rule, term_key(self.rid), tuple(term_key(a) for a in self.args), self.action.key)

    def __str__(self) -> str:
        vals = ", ".join(show(a) for a in (self.rid,) + self.args)
        if self.kind == "io":
            return f"perm_{self.sync}({vals})"
        acts = ", ".join(show_fact(f, bang=False) for f in self.action)
        return f"perm_{self.rule}({vals}; [{acts}])"


def relabel_pi(trace: Sequence) -> tuple:
    """Map a trace of spec labels to a trace of the role's own labels."""
    return tuple(pi(lab) for lab in trace)


def pi(lab) -> Multiset:
    if not isinstance(lab, PermLabel):
        return lab
    if lab.kind == "internal":
        return lab.action
    return Multiset((Fact(lab.sync, (lab.rid,) + lab.args),))


# -- operational reading -------------------------------------------------------


@dataclass(frozen=True)
class SpecState:
    """A token at ``place`` and the abstract state."""

    place: int
    facts: Multiset

    def __lt__(self, other: "SpecState") -> bool:
        return (self.place, self.facts.key) < (other.place, other.facts.key)


def clause_rules(spec: IoSpec, rid: Term) -> list[Rule]:
    """Rules implementing each clause's guard and update for thread ``rid``."""
    rules = []
    for c in spec.clauses:
        sigma = {c.rid: rid} if type(c.rid) is Var else {}
        sub = lambda f: f.map(lambda t: substitute(t, sigma))
        guard = tuple((op, substitute(a, sigma), substitute(b, sigma)) for op, a, b in c.guard)
        origin = {"internal": "user", "input": "sync-in", "output": "sync-out"}[c.kind]
        rules.append(
            Rule(c.rule, tuple(map(sub, c.lhs)), tuple(map(sub, c.label)), tuple(map(sub, c.rhs)), spec.role, origin, guard)
        )
    return rules


class SpecLTS:
    """Guarded LTS of a spec for one thread id.

    With ``inputs="seeded"`` input clauses fire on their own, with arguments
    drawn from ``input_seeds``; with ``inputs="passive"`` they fire only when
    an environment imposes their label (used inside compositions).
    """

    def __init__(
        self,
        spec: IoSpec,
        rid: Term,
        theory: Theory,
        universe: Universe,
        restrictions=None,
        semantics: str = "eq",
        inputs: str = "seeded",
    ):
        if inputs not in ("seeded", "passive"):
            raise ValueError(f"unknown input mode {inputs!r}")
        self.spec = spec
        self.rid = rid
        self.kinds = {c.rule: c for c in spec.clauses}
        rules = clause_rules(spec, rid)
        ins = [r.id for r in rules if r.origin == "sync-in"]
        seeds = input_seeds(rules, theory, universe) if inputs == "seeded" else None
        self.inner = MsrLTS(
            rules, theory, universe, semantics, restrictions, seeds=seeds, passive=ins if inputs == "passive" else (), lazy=False
        )

    def initial(self) -> SpecState:
        return SpecState(0, EMPTY)

    def _label(self, tr: Transition) -> PermLabel:
        c = self.kinds[tr.rule]
        sigma = dict(tr.sigma)
        vals = tuple(sigma.get(v, v) for v in c.vars)
        if c.kind == "internal":
            return PermLabel("internal", c.rule, self.rid, vals, tr.label)
        (lab,) = tr.label
        return PermLabel("io", c.rule, self.rid, tuple(lab.args[1:]), sync=c.sync)

    def transitions(self, state: SpecState, label=None, only=None) -> list[Transition]:
        if isinstance(label, PermLabel):
            inner = self.inner.transitions(state.facts, pi(label), only)
            out = [Transition(self._label(t), SpecState(state.place + 1, t.target), t.rule, t.sigma) for t in inner]
            return [t for t in out if t.label == label]
        out = []
        for t in self.inner.transitions(state.facts, label, only):
            out.append(Transition(self._label(t), SpecState(state.place + 1, t.target), t.rule, t.sigma))
        return out

    def successors(self, state: SpecState):
        for tr in self.transitions(state):
            yield tr.label, tr.target

    def relabeled(self) -> "PiView":
        return PiView(self)


class PiView:
    """The spec LTS with every label replaced by its image under ``pi``.

    Guided steps go straight to the underlying rules, whose labels already
    are the images.
    """

    def __init__(self, spec: SpecLTS):
        self.spec = spec

    def initial(self) -> SpecState:
        return self.spec.initial()

    def transitions(self, state: SpecState, label: Multiset | None = None, only=None) -> list[Transition]:
        out, seen = [], set()
        for t in self.spec.inner.transitions(state.facts, label, only):
            lab = pi(self.spec._label(t))
            target = SpecState(state.place + 1, t.target)
            if (lab, target) not in seen:
                seen.add((lab, target))
                out.append(Transition(lab, target, t.rule, t.sigma))
        return out

    def successors(self, state: SpecState):
        for tr in self.transitions(state):
            yield tr.label, tr.target


def spec_lts(spec: IoSpec, rid: Term, theory: Theory, universe: Universe, restrictions=None, **kw) -> SpecLTS:
    return SpecLTS(spec, rid, theory, universe, restrictions, **kw)


def input_seeds(rules: Sequence[Rule], theory: Theory, universe: Universe):
    """Candidate arguments for input halves (empty premise, one buffer fact).

    Candidates are instances of the patterns under which the role's other
    rules consume the buffered fact.  Premises produced by the role itself
    must be present in the state and fix their variables; other buffered
    inputs may be missing.  Remaining variables range over the universe's
    names.
    One junk value per input is added so that unusable inputs are explored
    too.  Other rules get the empty seed.
    """
    inputs = {r.id: r for r in rules if r.origin == "sync-in" and not r.lhs and len(r.rhs) == 1}
    buffered = {r.rhs[0].name for r in inputs.values()}
    consumers: dict[str, list[tuple[Rule, int]]] = {}
    for r in rules:
        for i, f in enumerate(r.lhs):
            consumers.setdefault(f.name, []).append((r, i))
    names = tuple(universe.fresh) + tuple(universe.pub)
    pools = {"fresh": tuple(universe.fresh), "pub": tuple(universe.pub), "msg": names}
    cache: dict = {}

    def candidates(half: Rule, state: Multiset) -> list[Fact]:
        buf = half.rhs[0]
        out: dict[Fact, None] = {}
        for cr, i in consumers.get(buf.name, ()):
            pat = cr.lhs[i]
            partial = [{}]
            for j, f in enumerate(cr.lhs):
                if j == i:
                    continue
                nxt = []
                for s in partial:
                    if f.name in buffered:
                        nxt.append(s)
                    for cand in state.by_name.get(f.name, ()):
                        nxt.extend(match_args(theory, f.args, cand.args, s))
                partial = _dedupe(nxt)
            for s in partial:
                free = sorted((v for a in pat.args for v in variables(a) if v not in s), key=term_key)
                free = list(dict.fromkeys(free))
                for combo in itertools.product(*(pools[v.sort] for v in free)):
                    s2 = dict(s)
                    s2.update(zip(free, combo))
                    out.setdefault(pat.map(lambda t: theory.normalize(substitute(t, s2))))
        junk = []
        for a in buf.args:
            if is_ground(a):
                junk.append(a)
            elif type(a) is Var:
                junk.append(universe.fresh[-1] if a.sort == "fresh" else universe.pub[-1])
            else:
                junk = None
                break
        if junk is not None:
            out.setdefault(Fact(buf.name, junk, buf.persistent))
        return list(out)

    def seeds(rule: Rule, state: Multiset):
        half = inputs.get(rule.id)
        if half is None:
            return ({},)
        key = (rule.id, state)
        hit = cache.get(key)
        if hit is None:
            buf = half.rhs[0]
            hit = []
            for cand in candidates(half, state):
                hit.extend(match_args(theory, buf.args, cand.args, {}))
            hit = _dedupe(hit)
            if len(cache) > 100_000:
                cache.clear()
            cache[key] = hit
        return hit

    return seeds


def _dedupe(sigmas: list[dict]) -> list[dict]:
    out, seen = [], set()
    for s in sigmas:
        k = tuple(sorted(((term_key(v), term_key(t)) for v, t in s.items())))
        if k not in seen:
            seen.add(k)
            out.append(s)
    return out


# -- JSON IR -------------------------------------------------------------------


def term_to_json(t: Term):
    if type(t) is Fresh:
        return {"fresh": t.name}
    if type(t) is Pub:
        return {"pub": t.name}
    if type(t) is Var:
        return {"var": t.name, "sort": t.sort}
    return {"app": t.fn, "args": [term_to_json(a) for a in t.args]}


def term_from_json(d) -> Term:
    if "fresh" in d:
        return Fresh(d["fresh"])
    if "pub" in d:
        return Pub(d["pub"])
    if "var" in d:
        return Var(d["var"], d["sort"])
    return App(d["app"], tuple(term_from_json(a) for a in d["args"]))


def fact_to_json(f: Fact):
    return {"name": f.name, "persistent": f.persistent, "args": [term_to_json(a) for a in f.args]}


def _fact_from(d) -> Fact:
    return Fact(d["name"], tuple(term_from_json(a) for a in d["args"]), d["persistent"])


def clause_to_json(c: Clause) -> dict:
    return {
        "kind": c.kind,
        "rule": c.rule,
        "rid": term_to_json(c.rid),
        "vars": [term_to_json(v) for v in c.vars],
        "lhs": [fact_to_json(f) for f in c.lhs],
        "label": [fact_to_json(f) for f in c.label],
        "rhs": [fact_to_json(f) for f in c.rhs],
        "guard": [[op, term_to_json(a), term_to_json(b)] for op, a, b in c.guard],
        "fact": c.fact,
        "sync": c.sync,
        "setup": c.setup,
    }


def clause_from_json(d: dict) -> Clause:
    return Clause(
        d["kind"],
        d["rule"],
        term_from_json(d["rid"]),
        tuple(term_from_json(v) for v in d["vars"]),
        tuple(_fact_from(f) for f in d["lhs"]),
        tuple(_fact_from(f) for f in d["label"]),
        tuple(_fact_from(f) for f in d["rhs"]),
        tuple((op, term_from_json(a), term_from_json(b)) for op, a, b in d["guard"]),
        d["fact"],
        d["sync"],
        d["setup"],
    )


def spec_to_json(spec: IoSpec) -> str:
    doc = {"role": spec.role, "start": spec.start, "clauses": [clause_to_json(c) for c in spec.clauses]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def spec_from_json(text: str) -> IoSpec:
    d = json.loads(text)
    return IoSpec(d["role"], tuple(clause_from_json(c) for c in d["clauses"]), d["start"])
