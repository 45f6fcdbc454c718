"""Facts, multisets of facts, rewrite rules and their transition semantics."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .terms import (
    App,
    BudgetExceeded,
    Fresh,
    Pub,
    Symbol,
    Term,
    Theory,
    Var,
    depth,
    enumerate_ground,
    is_ground,
    show,
    substitute,
    term_key,
    variables,
)

FACT_CLASSES = ("action", "env", "in", "out", "state", "buffer", "eq", "sync")

# reserved fact symbols and the label emitted by the freshness rule
K, FR, IN, OUT, FRESH = "K", "Fr", "In", "Out", "Fresh"


@dataclass(frozen=True)
class FactSymbol:
    name: str
    arity: int
    persistent: bool = False
    cls: str = "env"
    role: str | None = None

    def __post_init__(self):
        if self.cls not in FACT_CLASSES:
            raise ValueError(f"unknown fact class {self.cls!r}")


class Fact:
    __slots__ = ("name", "args", "persistent", "_hash", "_key")

    def __init__(self, name: str, args: Iterable[Term] = (), persistent: bool = False):
        self.name = name
        self.args = tuple(args)
        self.persistent = persistent
        self._hash = hash((name, self.args))
        self._key = None

    @property
    def key(self) -> tuple:
        k = self._key
        if k is None:
            k = self._key = (self.name, tuple(term_key(a) for a in self.args))
        return k

    def __eq__(self, other):
        return (
            type(other) is Fact
            and other._hash == self._hash
            and other.name == self.name
            and other.args == self.args
        )

    def __hash__(self):
        return self._hash

    def __lt__(self, other: "Fact") -> bool:
        return fact_key(self) < fact_key(other)

    def __repr__(self) -> str:
        return show_fact(self)

    def map(self, fn: Callable[[Term], Term]) -> "Fact":
        return Fact(self.name, (fn(a) for a in self.args), self.persistent)


def fact_key(f: Fact) -> tuple:
    return f.key


def show_fact(f: Fact, bang: bool = True) -> str:
    prefix = "!" if f.persistent and bang else ""
    return f"{prefix}{f.name}(" + ", ".join(show(a) for a in f.args) + ")"


def fact_vars(facts: Iterable[Fact]) -> set[Var]:
    out: set[Var] = set()
    for f in facts:
        for a in f.args:
            out |= variables(a)
    return out


class Multiset:
    """Immutable, canonically ordered multiset of facts."""

    __slots__ = ("items", "_hash", "__dict__")

    def __init__(self, facts: Iterable[Fact] | Mapping[Fact, int] = ()):
        counts = facts if type(facts) in (dict, Counter) else Counter(facts)
        self.items: tuple[tuple[Fact, int], ...] = tuple(
            sorted(((f, c) for f, c in counts.items() if c > 0), key=_item_key)
        )
        self._hash = hash(self.items)

    @classmethod
    def _raw(cls, items) -> "Multiset":
        m = cls.__new__(cls)
        m.items = items
        m._hash = hash(items)
        return m

    def __eq__(self, other):
        return type(other) is Multiset and other._hash == self._hash and other.items == self.items

    def __hash__(self):
        return self._hash

    def __len__(self):
        return sum(c for _, c in self.items)

    def __bool__(self):
        return bool(self.items)

    def __iter__(self) -> Iterator[Fact]:
        for f, c in self.items:
            for _ in range(c):
                yield f

    def __repr__(self) -> str:
        return "{|" + ", ".join(show_fact(f) for f in self) + "|}"

    def __lt__(self, other: "Multiset") -> bool:
        return self.key < other.key

    @cached_property
    def key(self) -> tuple:
        return tuple((fact_key(f), c) for f, c in self.items)

    @cached_property
    def name_key(self) -> tuple:
        return tuple(sorted(f.name for f in self))

    @cached_property
    def counts(self) -> dict[Fact, int]:
        return dict(self.items)

    @cached_property
    def by_name(self) -> dict[str, list[Fact]]:
        out: dict[str, list[Fact]] = {}
        for f, _ in self.items:
            out.setdefault(f.name, []).append(f)
        return out

    def count(self, f: Fact) -> int:
        return self.counts.get(f, 0)

    def __contains__(self, f: Fact) -> bool:
        return f in self.counts

    def issubset(self, other: "Multiset") -> bool:
        oc = other.counts
        return all(oc.get(f, 0) >= c for f, c in self.items)

    def union(self, other: Iterable[Fact]) -> "Multiset":
        c = Counter(self.counts)
        c.update(other)
        return Multiset(c)

    def difference(self, other: Iterable[Fact]) -> "Multiset":
        """Saturating difference: (A \\ B)(x) = max(A(x) - B(x), 0)."""
        c = Counter(self.counts)
        c.subtract(other)
        return Multiset({f: n for f, n in c.items() if n > 0})

    def linear(self) -> "Multiset":
        return Multiset({f: c for f, c in self.items if not f.persistent})

    def persistent(self) -> "Multiset":
        return Multiset({f: c for f, c in self.items if f.persistent})

    def without(self, names: Iterable[str]) -> "Multiset":
        drop = set(names)
        return Multiset({f: c for f, c in self.items if f.name not in drop})

    def names(self) -> set[str]:
        return {f.name for f, _ in self.items}


def _item_key(fc) -> tuple:
    return fc[0].key


def _rewrite(state: Multiset, consumed: Iterable[Fact], produced: Iterable[Fact]) -> Multiset:
    """``(state \\ consumed) + produced`` with saturating difference."""
    c = dict(state.items)
    for f in consumed:
        n = c.get(f, 0)
        if n > 1:
            c[f] = n - 1
        elif n:
            del c[f]
    for f in produced:
        c[f] = c.get(f, 0) + 1
    return Multiset(c)


EMPTY = Multiset()


@dataclass(frozen=True)
class Rule:
    """A labeled rewrite rule ``lhs --[label]-> rhs``.

    ``origin`` tags generated rules (e.g. ``md-closure`` for attacker
    construction steps, whose results are depth-bounded by the universe).
    ``guard`` holds the equality checks extracted from restricted labels as
    ``(op, t1, t2)`` triples with op in {"eq", "neq"}.
    """

    id: str
    lhs: tuple[Fact, ...]
    label: tuple[Fact, ...]
    rhs: tuple[Fact, ...]
    role: str | None = None
    origin: str = "user"
    guard: tuple[tuple[str, Term, Term], ...] = ()

    @cached_property
    def vars(self) -> set[Var]:
        return fact_vars(self.lhs + self.label + self.rhs)

    def __repr__(self) -> str:
        lab = ", ".join(show_fact(f) for f in self.label)
        return (
            f"rule {self.id}: ["
            + ", ".join(show_fact(f) for f in self.lhs)
            + f"] --[{lab}]-> ["
            + ", ".join(show_fact(f) for f in self.rhs)
            + "]"
        )


@dataclass
class Universe:
    """Bounded instantiation universe for variables not bound by matching.

    Fresh- and pub-sorted variables range over the name pools; unsorted
    variables range over ground terms of depth <= ``msg_depth`` built from
    the pools with the non-destructor symbols of arity <= 2.  Terms built by
    attacker construction steps are capped at ``term_depth``.
    """

    fresh: tuple[Fresh, ...] = (Fresh("n1"), Fresh("n2"))
    pub: tuple[Pub, ...] = (Pub("p1"), Pub("p2"))
    term_depth: int = 2
    msg_depth: int = 1
    cap: int = 10**6
    _msgs: dict = field(default_factory=dict, repr=False, compare=False)

    def values(self, sort: str, theory: Theory) -> Sequence[Term]:
        if sort == "fresh":
            return self.fresh
        if sort == "pub":
            return self.pub
        return self.messages(theory)

    def messages(self, theory: Theory) -> list[Term]:
        key = id(theory)
        if key not in self._msgs:
            syms = [s for s in theory.symbols.values() if s.arity <= 2 and s.kind != "destructor"]
            self._msgs[key] = enumerate_ground(
                self.fresh + self.pub, syms, self.msg_depth, theory, self.cap
            )
        return self._msgs[key]

    def bounds(self) -> dict:
        return {
            "fresh": [n.name for n in self.fresh],
            "pub": [n.name for n in self.pub],
            "term_depth": self.term_depth,
            "msg_depth": self.msg_depth,
        }

    def with_names(self, fresh: Iterable[Fresh] = (), pub: Iterable[Pub] = ()) -> "Universe":
        f = tuple(dict.fromkeys(tuple(fresh) + self.fresh))
        p = tuple(dict.fromkeys(tuple(pub) + self.pub))
        return Universe(f, p, self.term_depth, self.msg_depth, self.cap)


@dataclass
class MsrModel:
    facts: dict[str, FactSymbol]
    theory: Theory
    rules: list[Rule]
    roles: dict[str, int] = field(default_factory=dict)
    restrictions: dict[str, str] = field(default_factory=dict)
    formats: dict = field(default_factory=dict)
    name: str = "model"

    def env_rules(self) -> list[Rule]:
        return [r for r in self.rules if r.role is None]

    def role_rules(self, role: str) -> list[Rule]:
        return [r for r in self.rules if r.role == role]

    @property
    def eq_facts(self) -> set[str]:
        return {n for n, s in self.facts.items() if s.cls == "eq"}

    def rule(self, rid: str) -> Rule:
        for r in self.rules:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def names(self) -> tuple[set[Fresh], set[Pub]]:
        fresh: set[Fresh] = set()
        pub: set[Pub] = set()
        for r in self.rules:
            for f in r.lhs + r.label + r.rhs:
                for a in f.args:
                    for n in _names(a):
                        (fresh if type(n) is Fresh else pub).add(n)
        return fresh, pub

    def universe(self, fresh: int = 2, pub: int = 2, term_depth: int = 2, msg_depth: int = 1) -> Universe:
        mf, mp = self.model_names()
        return Universe(
            tuple(sorted(mf, key=term_key)) + tuple(Fresh(f"n{i + 1}") for i in range(fresh)),
            tuple(sorted(mp, key=term_key)) + tuple(Pub(f"p{i + 1}") for i in range(pub)),
            term_depth,
            msg_depth,
        )

    def model_names(self):
        return self.names()


def _names(t: Term):
    if type(t) in (Fresh, Pub):
        yield t
    elif type(t) is App:
        for a in t.args:
            yield from _names(a)


def attach_guards(rules: Iterable[Rule], restrictions: Mapping[str, str]) -> list[Rule]:
    """Fill each rule's guard from its restricted (Σ_eq) label facts."""
    out = []
    for r in rules:
        guard = tuple(
            (restrictions[f.name], f.args[0], f.args[1]) for f in r.label if f.name in restrictions
        )
        out.append(replace(r, guard=guard) if guard != r.guard else r)
    return out


@dataclass(frozen=True)
class Transition:
    label: Multiset
    target: Multiset
    rule: str
    sigma: tuple


Seeds = Callable[[Rule, Multiset], Iterable[dict]]


@dataclass(frozen=True)
class LazyState:
    """State of an LTS with deferred attacker construction.

    ``slots`` holds one knowledge snapshot per construction step taken but
    not yet spent (see ``attacker``).
    """

    facts: Multiset
    slots: tuple = ()

    def __lt__(self, other: "LazyState") -> bool:
        return (self.facts.key, _slots_key(self.slots)) < (other.facts.key, _slots_key(other.slots))


def _slots_key(slots) -> tuple:
    return tuple(tuple(sorted(term_key(t) for t in s)) for s in slots)


def lazy_capable(rules: Sequence[Rule], theory: Theory) -> bool:
    """Deferred construction is exact for these rules and theory."""
    from .attacker import Deducer

    if not any(r.origin == "md-closure" for r in rules) or not Deducer.supports(theory):
        return False
    for r in rules:
        if r.origin == "md-closure" or r.id == "MD_In":
            continue
        if any(f.name == K for f in r.lhs):
            return False
    return True


class MsrLTS:
    """The labeled transition system induced by a rule set.

    ``semantics`` is ``plain`` (the standard step relation) or ``eq`` (steps
    additionally guarded by the restriction map, restricted facts dropped
    from emitted labels).  ``seeds`` may supply partial substitutions per
    rule and state for unguided steps (used to pick input values);
    rules listed in ``passive`` fire only when a label is imposed.
    """

    def __init__(
        self,
        rules: Sequence[Rule],
        theory: Theory,
        universe: Universe,
        semantics: str = "plain",
        restrictions: Mapping[str, str] | None = None,
        seeds: Seeds | None = None,
        passive: Iterable[str] = (),
        lazy: bool | None = None,
    ):
        if semantics not in ("plain", "eq"):
            raise ValueError(f"unknown semantics {semantics!r}")
        self.rules = list(rules)
        self.theory = theory
        self.universe = universe
        self.semantics = semantics
        self.restrictions = dict(restrictions or {})
        self.seeds = seeds
        self.passive = frozenset(passive)
        self._norm_rules = [self._normalize_rule(r) for r in self.rules]
        self._needs = {r.id: frozenset(f.name for f in r.lhs) for r in self._norm_rules}
        self._emits = {
            r.id: tuple(sorted(f.name for f in r.label if not self._dropped(f))) for r in self._norm_rules
        }
        self._cache: dict = {}
        if lazy is None:
            lazy = lazy_capable(self.rules, theory)
        self.lazy = bool(lazy)
        if self.lazy:
            from .attacker import Deducer

            closures = {r.rhs[0].args[0].fn: len(r.lhs) for r in self.rules if r.origin == "md-closure"}
            self.deducer = Deducer(theory, closures, universe.term_depth)
            self._md_in = next((r for r in self.rules if r.id == "MD_In"), None)
            self._active = [
                r for r in self._norm_rules if r.origin != "md-closure" and r.id != "MD_In"
            ]
            self._fwd_cache: dict = {}
        else:
            self._active = self._norm_rules

    def _normalize_rule(self, r: Rule) -> Rule:
        n = self.theory.normalize
        return replace(
            r,
            lhs=tuple(f.map(n) for f in r.lhs),
            label=tuple(f.map(n) for f in r.label),
            rhs=tuple(f.map(n) for f in r.rhs),
        )

    def initial(self):
        return LazyState(EMPTY) if self.lazy else EMPTY

    def observable(self, label: Multiset) -> Multiset:
        if self.semantics == "eq" and self.restrictions:
            return label.without(self.restrictions)
        return label

    def transitions(self, state, label: Multiset | None = None, only=None) -> list[Transition]:
        """Steps from ``state``; with ``label`` only steps emitting it, with
        ``only`` only steps of the named rules."""
        key = (state, label, only)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if len(self._cache) > 300_000:
            self._cache.clear()
        if self.lazy:
            hit = self._lazy_transitions(state, label, only)
        else:
            hit = self._eager_transitions(state, label, only)
        self._cache[key] = hit
        return hit

    def _eager_transitions(self, state, label, only) -> list[Transition]:
        out: list[Transition] = []
        seen: set = set()
        for r in self._norm_rules:
            if only is not None and r.id not in only:
                continue
            if label is None and r.id in self.passive:
                continue
            for tr in self._fire(r, state, label):
                key = (tr.label, tr.target)
                if key not in seen:
                    seen.add(key)
                    out.append(tr)
        return out

    def _lazy_transitions(self, state: LazyState, label: Multiset | None, only=None) -> list[Transition]:
        from .attacker import apply_option

        facts, slots = state.facts, state.slots
        out: list[Transition] = []
        seen: set = set()

        def add(tr: Transition):
            key = (tr.label, tr.target)
            if key not in seen:
                seen.add(key)
                out.append(tr)

        for r in self._active:
            if only is not None and r.id not in only:
                continue
            if label is None and r.id in self.passive:
                continue
            for tr in self._fire(r, facts, label):
                add(Transition(tr.label, LazyState(tr.target, slots), tr.rule, tr.sigma))
        known = frozenset(f.args[0] for f in facts.by_name.get(K, ()))
        if (
            not label
            and (only is None or "MD_construct" in only)
            and (label is not None or "MD_construct" not in self.passive)
            and self.deducer.closure_enabled(known)
        ):
            add(Transition(EMPTY, LazyState(facts, slots + (known,)), "MD_construct", ()))
        md_in = self._md_in
        if md_in is None or (label is None and md_in.id in self.passive) or (only is not None and md_in.id not in only):
            return out
        if label is None:
            options = {t: [(frozenset(), ())] for t in known}
            for t, opts in self._forward(known, slots).items():
                options.setdefault(t, []).extend(opts)
        else:
            if len(label) != 1:
                return out
            (lf,) = list(label)
            if lf.name != K or len(lf.args) != 1 or not is_ground(lf.args[0]):
                return out
            t = self.theory.normalize(lf.args[0])
            options = {t: self.deducer.derive(t, known, slots)}
        x = md_in.lhs[0].args[0]
        for t in sorted(options, key=term_key):
            lab = Multiset((Fact(K, (t,)),))
            for opt in options[t]:
                rest, prods = apply_option(slots, opt)
                new = [Fact(K, (u,), True) for u in prods if u not in known]
                target = LazyState(facts.union(new + [Fact(IN, (t,))]), rest)
                add(Transition(lab, target, md_in.id, ((x, t),)))
        return out

    def _forward(self, known: frozenset, slots: tuple) -> dict:
        key = (known, slots)
        hit = self._fwd_cache.get(key)
        if hit is None:
            if len(self._fwd_cache) > 4096:
                self._fwd_cache.clear()
            hit = self._fwd_cache[key] = self.deducer.forward(known, slots)
        return hit

    def successors(self, state) -> Iterator[tuple[Multiset, Multiset]]:
        for tr in self.transitions(state):
            yield tr.label, tr.target

    def successors_with_label(self, state: Multiset, label: Multiset) -> list[Multiset]:
        return [tr.target for tr in self.transitions(state, label)]

    def _fire(self, rule: Rule, state: Multiset, label: Multiset | None) -> Iterator[Transition]:
        th = self.theory
        names = state.by_name
        for n in self._needs[rule.id]:
            if n not in names:
                return
        if label is not None and self._emits[rule.id] != label.name_key:
            return
        # seeds steer unguided exploration; a guided step takes values from the label
        seeds = self.seeds(rule, state) if self.seeds and label is None else ({},)
        emitted = [f for f in rule.label if not self._dropped(f)]
        for seed in seeds:
            sigmas: Iterable[dict] = [dict(seed)]
            if label is not None:
                if len(emitted) != len(label):
                    continue
                sigmas = [s2 for s in sigmas for s2 in match_facts(th, emitted, list(label), s)]
            for sigma in sigmas:
                for s in self._match_lhs(rule.lhs, 0, state, sigma):
                    yield from self._complete(rule, state, s, label)

    def _dropped(self, f: Fact) -> bool:
        return self.semantics == "eq" and f.name in self.restrictions

    def _match_lhs(self, lhs, i, state: Multiset, sigma: dict) -> Iterator[dict]:
        if i == len(lhs):
            yield sigma
            return
        pat = lhs[i]
        for cand in state.by_name.get(pat.name, ()):
            for s in match_args(self.theory, pat.args, cand.args, sigma):
                yield from self._match_lhs(lhs, i + 1, state, s)

    def _complete(self, rule: Rule, state: Multiset, sigma: dict, label) -> Iterator[Transition]:
        th = self.theory
        free = sorted((v for v in rule.vars if v not in sigma), key=term_key)
        pools = [self.universe.values(v.sort, th) for v in free]
        for combo in itertools.product(*pools):
            s = dict(sigma)
            s.update(zip(free, combo))
            inst = lambda f: f.map(lambda t: th.normalize(substitute(t, s)))
            lhs = [inst(f) for f in rule.lhs]
            lin = Counter(f for f in lhs if not f.persistent)
            if any(state.count(f) < c for f, c in lin.items()):
                continue
            if any(f not in state for f in lhs if f.persistent):
                continue
            rhs = [inst(f) for f in rule.rhs]
            if rule.origin == "md-closure" and any(
                depth(a) > self.universe.term_depth for f in rhs for a in f.args
            ):
                continue
            if self.semantics == "eq" and not check_guard(th, rule.guard, s):
                continue
            lab = Multiset(inst(f) for f in rule.label if not self._dropped(f))
            if label is not None and lab != label:
                continue
            rhs = [f for f in rhs if not (f.persistent and f in state)]
            target = _rewrite(state, lin.elements(), rhs)
            yield Transition(lab, target, rule.id, tuple(sorted(s.items(), key=lambda kv: term_key(kv[0]))))


def match_args(th: Theory, pats: Sequence[Term], targets: Sequence[Term], sigma: dict) -> Iterator[dict]:
    if len(pats) != len(targets):
        return
    if not pats:
        yield sigma
        return
    for s in th.match(pats[0], targets[0], sigma):
        yield from match_args(th, pats[1:], targets[1:], s)


def match_facts(th: Theory, pats: Sequence[Fact], targets: list[Fact], sigma: dict) -> Iterator[dict]:
    """Match a list of fact patterns bijectively against ground facts."""
    if not pats:
        if not targets:
            yield sigma
        return
    p = pats[0]
    tried: set = set()
    for i, t in enumerate(targets):
        if t.name != p.name or t in tried:
            continue
        tried.add(t)
        rest = targets[:i] + targets[i + 1 :]
        for s in match_args(th, p.args, t.args, sigma):
            yield from match_facts(th, pats[1:], rest, s)


def check_guard(th: Theory, guard, sigma: Mapping) -> bool:
    for op, a, b in guard:
        same = th.eq(substitute(a, sigma), substitute(b, sigma))
        if same != (op == "eq"):
            return False
    return True


def model_lts(model: MsrModel, universe: Universe, semantics: str = "plain", **kw) -> MsrLTS:
    return MsrLTS(model.rules, model.theory, universe, semantics, model.restrictions, **kw)


def step(state: Multiset, model: MsrModel, universe: Universe) -> list[Transition]:
    """Successors of ``state`` under the standard step relation."""
    return model_lts(model, universe, "plain").transitions(state)


def step_eq(state: Multiset, model: MsrModel, universe: Universe) -> list[Transition]:
    """Successors under the equality-checked semantics."""
    return model_lts(model, universe, "eq").transitions(state)


Trace = tuple  # tuple[Multiset, ...]


def trace_set(lts, depth_bound: int, cap: int = 2_000_000) -> set[Trace]:
    """All label sequences of runs of length <= depth_bound from the initial state."""
    if depth_bound < 0:
        raise ValueError("depth must be nonnegative")
    frontier: dict[Trace, set] = {(): {lts.initial()}}
    result: set[Trace] = {()}
    work = 0
    for _ in range(depth_bound):
        nxt: dict[Trace, set] = {}
        for tr, states in frontier.items():
            for s in states:
                for lab, s2 in lts.successors(s):
                    nxt.setdefault(tr + (lab,), set()).add(s2)
                    work += 1
                    if work > cap:
                        raise BudgetExceeded(f"trace exploration exceeded {cap} transitions")
        result.update(nxt)
        frontier = nxt
    return result


def traces(model: MsrModel, depth_bound: int, semantics: str = "plain", universe: Universe | None = None) -> set[Trace]:
    universe = universe or model.universe()
    return trace_set(model_lts(model, universe, semantics), depth_bound)


def filter_empty(trs: Iterable[Trace]) -> set[Trace]:
    return {tuple(a for a in t if a) for t in trs}


def fresh_labels(label: Multiset) -> list[Term]:
    return [f.args[0] for f in label if f.name in (FRESH, FR) and f.args]


def collision_free(trs: Iterable[Trace]) -> set[Trace]:
    """Drop traces in which the same fresh value is generated at two positions."""
    out = set()
    for t in trs:
        seen: dict[Term, int] = {}
        ok = True
        for i, a in enumerate(t):
            for n in fresh_labels(a):
                if seen.setdefault(n, i) != i:
                    ok = False
        if ok:
            out.add(t)
    return out


def in_restriction(trace: Trace, restrictions: Mapping[str, str], theory: Theory) -> bool:
    """Membership in the equality restriction: every restricted fact holds."""
    for a in trace:
        for f in a:
            op = restrictions.get(f.name)
            if op is not None and theory.eq(f.args[0], f.args[1]) != (op == "eq"):
                return False
    return True


def restrict_eq(trs: Iterable[Trace], restrictions: Mapping[str, str], theory: Theory) -> set[Trace]:
    """Traces satisfying the restriction, with restricted facts removed from labels."""
    return {
        tuple(a.without(restrictions) for a in t)
        for t in trs
        if in_restriction(t, restrictions, theory)
    }


def show_label(label: Multiset) -> list[str]:
    return [show_fact(f, bang=False) for f in label]


def trace_json(t: Trace) -> list[list[str]]:
    return [show_label(a) for a in t]
