"""Term algebra with a restricted equational theory.

Terms are built from fresh names, public names, variables and applications of
function symbols.  Equality modulo the theory is decided by comparing normal
forms: a terminating set of rewrite rules (checked syntactically when added)
plus one commutative exponentiation symbol whose exponent chains are sorted.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Mapping

__all__ = [
    "Symbol",
    "Term",
    "Fresh",
    "Pub",
    "Var",
    "App",
    "Equation",
    "Theory",
    "TheoryError",
    "NonTerminatingTheory",
    "BudgetExceeded",
    "term_key",
    "depth",
    "size",
    "variables",
    "substitute",
    "is_ground",
    "names",
    "enumerate_ground",
    "show",
]

SYMBOL_KINDS = ("constructor", "destructor", "format", "crypto")
SORTS = ("msg", "fresh", "pub")
REWRITE_BOUND = 10_000
DEFAULT_CAP = 10**6


class TheoryError(ValueError):
    """An equation falls outside the supported theory class."""


class NonTerminatingTheory(RuntimeError):
    """Normalization exceeded the rewrite-step bound."""


class BudgetExceeded(RuntimeError):
    """A bounded enumeration would exceed its configured cap."""


@dataclass(frozen=True)
class Symbol:
    name: str
    arity: int
    kind: str = "constructor"

    def __post_init__(self):
        if self.arity < 0:
            raise ValueError(f"negative arity for {self.name}")
        if self.kind not in SYMBOL_KINDS:
            raise ValueError(f"unknown symbol kind {self.kind!r}")


class Term:
    __slots__ = ()

    def __lt__(self, other: "Term") -> bool:
        return term_key(self) < term_key(other)

    def __repr__(self) -> str:
        return show(self)


class Fresh(Term):
    """A fresh name (unguessable constant)."""

    __slots__ = ("name", "_hash")

    def __init__(self, name: str):
        self.name = name
        self._hash = hash(("Fresh", name))

    def __eq__(self, other):
        return type(other) is Fresh and other.name == self.name

    def __hash__(self):
        return self._hash


class Pub(Term):
    """A public name."""

    __slots__ = ("name", "_hash")

    def __init__(self, name: str):
        self.name = name
        self._hash = hash(("Pub", name))

    def __eq__(self, other):
        return type(other) is Pub and other.name == self.name

    def __hash__(self):
        return self._hash


class Var(Term):
    __slots__ = ("name", "sort", "_hash")

    def __init__(self, name: str, sort: str = "msg"):
        if sort not in SORTS:
            raise ValueError(f"unknown sort {sort!r}")
        self.name = name
        self.sort = sort
        self._hash = hash(("Var", name, sort))

    def __eq__(self, other):
        return type(other) is Var and other.name == self.name and other.sort == self.sort

    def __hash__(self):
        return self._hash


class App(Term):
    __slots__ = ("fn", "args", "_hash")

    def __init__(self, fn: str, args: Iterable[Term] = ()):
        self.fn = fn
        self.args = tuple(args)
        self._hash = hash(("App", fn, self.args))

    def __eq__(self, other):
        return (
            self is other
            or type(other) is App
            and other._hash == self._hash
            and other.fn == self.fn
            and other.args == self.args
        )

    def __hash__(self):
        return self._hash


Substitution = Mapping[Var, Term]

_TAGS = {Pub: 0, Fresh: 1, Var: 2, App: 3}


@lru_cache(maxsize=1 << 18)
def term_key(t: Term) -> tuple:
    """Total order key: (variant tag, name, args...)."""
    if type(t) is App:
        return (3, t.fn, tuple(term_key(a) for a in t.args))
    if type(t) is Var:
        return (2, t.name, t.sort)
    return (_TAGS[type(t)], t.name)


def depth(t: Term) -> int:
    if type(t) is App and t.args:
        return 1 + max(depth(a) for a in t.args)
    return 0


def size(t: Term) -> int:
    if type(t) is App:
        return 1 + sum(size(a) for a in t.args)
    return 1


def variables(t: Term) -> set[Var]:
    out: set[Var] = set()
    _collect_vars(t, out)
    return out


def _collect_vars(t: Term, out: set) -> None:
    if type(t) is Var:
        out.add(t)
    elif type(t) is App:
        for a in t.args:
            _collect_vars(a, out)


def var_occurrences(t: Term) -> list[Var]:
    if type(t) is Var:
        return [t]
    if type(t) is App:
        return [v for a in t.args for v in var_occurrences(a)]
    return []


def names(t: Term) -> set[Term]:
    if type(t) in (Fresh, Pub):
        return {t}
    if type(t) is App:
        return set().union(*(names(a) for a in t.args)) if t.args else set()
    return set()


def is_ground(t: Term) -> bool:
    if type(t) is Var:
        return False
    if type(t) is App:
        return all(is_ground(a) for a in t.args)
    return True


def substitute(t: Term, sigma: Substitution) -> Term:
    if type(t) is Var:
        return sigma.get(t, t)
    if type(t) is App and t.args:
        return App(t.fn, tuple(substitute(a, sigma) for a in t.args))
    return t


def show(t: Term, exp: str = "exp", pair: str = "pair") -> str:
    """Print a term in the model-file literal syntax."""
    if type(t) is Fresh:
        return f"~'{t.name}'"
    if type(t) is Pub:
        return f"'{t.name}'"
    if type(t) is Var:
        return {"msg": "", "fresh": "~", "pub": "$"}[t.sort] + t.name
    if t.fn == exp and len(t.args) == 2:
        base, e = t.args
        rhs = show(e, exp, pair)
        if type(e) is App and e.fn == exp:
            rhs = f"({rhs})"
        return f"{show(base, exp, pair)}^{rhs}"
    if t.fn == pair and len(t.args) == 2:
        items = []
        cur: Term = t
        while type(cur) is App and cur.fn == pair and len(cur.args) == 2:
            items.append(cur.args[0])
            cur = cur.args[1]
        items.append(cur)
        return "<" + ", ".join(show(a, exp, pair) for a in items) + ">"
    if not t.args:
        return t.fn
    return f"{t.fn}(" + ", ".join(show(a, exp, pair) for a in t.args) + ")"


@dataclass(frozen=True)
class Equation:
    lhs: Term
    rhs: Term
    orientation: str = "rewrite"  # or "ac-commutes"


def _exp_chain(t: Term, exp: str) -> tuple[Term, list[Term]]:
    exps: list[Term] = []
    while type(t) is App and t.fn == exp:
        exps.append(t.args[1])
        t = t.args[0]
    exps.reverse()
    return t, exps


def _build_chain(base: Term, exps: Iterable[Term], exp: str) -> Term:
    for e in exps:
        base = App(exp, (base, e))
    return base


@dataclass
class Theory:
    """Signature plus rewrite rules plus an optional commutative exponent."""

    symbols: dict[str, Symbol] = field(default_factory=dict)
    rules: list[Equation] = field(default_factory=list)
    exp: str | None = None
    bound: int = REWRITE_BOUND

    def __post_init__(self):
        self._by_root: dict[str, list[Equation]] = {}
        self._cache: dict[Term, Term] = {}
        for eq in list(self.rules):
            self._index(eq)

    def add_symbol(self, sym: Symbol) -> None:
        old = self.symbols.get(sym.name)
        if old is not None and old != sym:
            raise TheoryError(f"symbol {sym.name} redeclared")
        self.symbols[sym.name] = sym

    def declare_commutative(self, name: str) -> None:
        sym = self.symbols.get(name)
        if sym is None or sym.arity != 2:
            raise TheoryError(f"commutative exponent {name} must be a declared binary symbol")
        if self.exp is not None and self.exp != name:
            raise TheoryError("only one commutative exponent symbol is supported")
        self.exp = name
        self._cache.clear()

    def add_equation(self, lhs: Term, rhs: Term) -> Equation:
        eq = Equation(lhs, rhs)
        self.check_rewrite(eq)
        self.rules.append(eq)
        self._index(eq)
        return eq

    def _index(self, eq: Equation) -> None:
        self._by_root.setdefault(eq.lhs.fn, []).append(eq)
        self._cache.clear()

    def check_rewrite(self, eq: Equation) -> None:
        """Conservative termination criterion for one oriented equation.

        Accepted when the lhs is an application not rooted at the exponent,
        contains no fresh names, every rhs variable occurs at least as often
        in the lhs, and either the rhs is strictly smaller or it is a subterm
        or constant (destructor shape).
        """
        lhs, rhs = eq.lhs, eq.rhs
        if type(lhs) is not App:
            raise TheoryError("equation lhs must be a function application")
        if self.exp is not None and lhs.fn == self.exp:
            raise TheoryError("rewrite rules rooted at the commutative exponent are unsupported")
        if any(type(n) is Fresh for n in names(lhs) | names(rhs)):
            raise TheoryError("equations must not contain fresh names")
        for t in (lhs, rhs):
            for sub in _subterms(t):
                if type(sub) is App:
                    sym = self.symbols.get(sub.fn)
                    if sym is None:
                        raise TheoryError(f"undeclared symbol {sub.fn} in equation")
                    if sym.arity != len(sub.args):
                        raise TheoryError(f"arity mismatch for {sub.fn} in equation")
        lo, ro = var_occurrences(lhs), var_occurrences(rhs)
        for v in set(ro):
            if ro.count(v) > lo.count(v):
                raise TheoryError(f"variable {show(v)} duplicated or unbound on the rhs")
        destructor_shape = rhs in set(_subterms(lhs)) or (type(rhs) is App and not rhs.args)
        if not (size(rhs) < size(lhs) or destructor_shape):
            raise TheoryError("equation does not strictly decrease term size")

    # -- normalization -------------------------------------------------

    def normalize(self, t: Term) -> Term:
        cached = self._cache.get(t)
        if cached is not None:
            return cached
        budget = [self.bound]
        out = self._norm(t, budget)
        if len(self._cache) > 1 << 18:
            self._cache.clear()
        self._cache[t] = out
        return out

    def _norm(self, t: Term, budget: list[int]) -> Term:
        if type(t) is not App or not t.args and t.fn not in self._by_root:
            return t
        cached = self._cache.get(t)
        if cached is not None:
            return cached
        args = tuple(self._norm(a, budget) for a in t.args)
        cur = App(t.fn, args)
        if cur.fn == self.exp:
            cur = self._canon_exp(cur)
        for eq in self._by_root.get(cur.fn, ()):
            for sigma in self._match(eq.lhs, cur, {}):
                budget[0] -= 1
                if budget[0] < 0:
                    raise NonTerminatingTheory(
                        f"rewrite bound of {self.bound} steps exceeded normalizing {show(t)}"
                    )
                return self._norm(substitute(eq.rhs, sigma), budget)
        return cur

    def _canon_exp(self, t: Term) -> Term:
        base, exps = _exp_chain(t, self.exp)
        exps.sort(key=term_key)
        return _build_chain(base, exps, self.exp)

    def eq(self, t1: Term, t2: Term) -> bool:
        return self.normalize(t1) == self.normalize(t2)

    # -- matching -------------------------------------------------------

    def match(self, pattern: Term, target: Term, sigma: Substitution | None = None) -> list[dict]:
        """All substitutions σ extending ``sigma`` with pattern·σ =_E target.

        ``target`` must be ground.  Matching runs on normal forms; the
        commutative exponent is handled by permuting exponent chains.
        Patterns are expected to be irreducible (no destructor redexes).
        """
        sigma = dict(sigma or {})
        p = self.normalize(substitute(pattern, sigma)) if sigma else self.normalize(pattern)
        t = self.normalize(target)
        out: list[dict] = []
        seen: set = set()
        for s in self._match(p, t, sigma):
            key = frozenset(s.items())
            if key not in seen:
                seen.add(key)
                out.append(s)
        return out

    def _match(self, p: Term, t: Term, sigma: dict) -> Iterator[dict]:
        tp = type(p)
        if tp is Var:
            bound = sigma.get(p)
            if bound is not None:
                if bound == t:
                    yield sigma
                return
            if p.sort == "fresh" and type(t) is not Fresh:
                return
            if p.sort == "pub" and type(t) is not Pub:
                return
            s = dict(sigma)
            s[p] = t
            yield s
            return
        if tp is not App:
            if p == t:
                yield sigma
            return
        if self.exp is not None and p.fn == self.exp:
            yield from self._match_exp(p, t, sigma)
            return
        if type(t) is not App or t.fn != p.fn or len(t.args) != len(p.args):
            return
        yield from self._match_args(p.args, t.args, 0, sigma)

    def _match_args(self, ps, ts, i, sigma) -> Iterator[dict]:
        if i == len(ps):
            yield sigma
            return
        for s in self._match(ps[i], ts[i], sigma):
            yield from self._match_args(ps, ts, i + 1, s)

    def _match_exp(self, p: App, t: Term, sigma: dict) -> Iterator[dict]:
        pbase, pexps = _exp_chain(p, self.exp)
        tbase, texps = _exp_chain(t, self.exp)
        m, n = len(pexps), len(texps)
        if n < m:
            return
        if type(pbase) is not Var and n != m:
            return
        for chosen in itertools.permutations(range(n), m):
            rest = [texps[j] for j in range(n) if j not in chosen]
            base_value = _build_chain(tbase, rest, self.exp)
            for s in self._match(pbase, base_value, sigma):
                yield from self._match_args(pexps, [texps[j] for j in chosen], 0, s)


def _subterms(t: Term) -> Iterator[Term]:
    yield t
    if type(t) is App:
        for a in t.args:
            yield from _subterms(a)


def enumerate_ground(
    pool: Iterable[Term],
    signature: Iterable[Symbol],
    depth_bound: int,
    theory: Theory | None = None,
    cap: int = DEFAULT_CAP,
) -> list[Term]:
    """Normal forms of all ground terms of depth <= ``depth_bound`` over ``pool``.

    Nullary symbols count as depth-0 atoms.  Raises BudgetExceeded when the
    number of candidate terms at some level would exceed ``cap``.
    """
    if depth_bound < 0:
        raise ValueError("depth must be nonnegative")
    syms = sorted(signature, key=lambda s: s.name)
    norm = theory.normalize if theory is not None else (lambda x: x)
    level: set[Term] = {norm(n) for n in pool}
    level |= {norm(App(s.name)) for s in syms if s.arity == 0}
    if len(level) > cap:
        raise BudgetExceeded(f"ground universe exceeds cap {cap}")
    for _ in range(depth_bound):
        current = sorted(level, key=term_key)
        projected = len(current) + sum(len(current) ** s.arity for s in syms if s.arity > 0)
        if projected > cap:
            raise BudgetExceeded(f"ground universe of ~{projected} terms exceeds cap {cap}")
        nxt = set(level)
        for s in syms:
            if s.arity == 0:
                continue
            for args in itertools.product(current, repeat=s.arity):
                nxt.add(norm(App(s.name, args)))
        level = nxt
    return sorted(level, key=term_key)
