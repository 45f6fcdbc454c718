"""Deferred attacker construction.

An attacker construction step ``[K(x1..xk)] --> [K(f(x1..xk))]`` has an
empty label, consumes nothing and only adds knowledge.  Instead of choosing
``f`` and the arguments when the step is taken, the explorer records a
*slot*: a snapshot of the attacker knowledge at that moment.  When a later
step needs ``K(t)`` for a term not yet known, ``t`` is built from slots (each
slot performs one construction, using its own snapshot and the products of
earlier slots).  Every run of the eager system maps to a run of the deferred
one with the same labels and length, and back, so trace sets coincide.

This module holds the term-level part: which terms slots can produce.
"""

from __future__ import annotations

import itertools
from typing import Iterator, Sequence

from .terms import App, Term, Theory, _build_chain, _exp_chain, depth, term_key

__all__ = ["Deducer"]

# one way of deriving a term: (slot indices used, ((slot, product), ...))
Option = tuple[frozenset, tuple]


class Deducer:
    """Construction oracle for a theory's closure rules and a depth cap.

    ``closures`` maps each constructible symbol to its arity.  Exactness
    requires every rewrite rule to have a nullary constant on its right-hand
    side (see ``supports``).
    """

    def __init__(self, theory: Theory, closures: dict[str, int], cap: int):
        self.theory = theory
        self.closures = dict(closures)
        self.cap = cap
        self.nullary = sorted(f for f, k in self.closures.items() if k == 0)
        self.constants = [theory.normalize(App(f)) for f in self.nullary]

    @staticmethod
    def supports(theory: Theory) -> bool:
        return all(type(eq.rhs) is App and not eq.rhs.args for eq in theory.rules)

    # -- backward: can this particular term be produced? ---------------

    def decompositions(self, t: Term) -> list[tuple[str, tuple]]:
        """Pairs (f, args) with nf(f(args)) = t, up to dominated rewrite routes."""
        if type(t) is not App:
            return []
        th = self.theory
        if th.exp is not None and t.fn == th.exp:
            if th.exp not in self.closures:
                return []
            base, exps = _exp_chain(t, th.exp)
            out, seen = [], set()
            for i, e in enumerate(exps):
                if e in seen:
                    continue
                seen.add(e)
                rest = exps[:i] + exps[i + 1 :]
                out.append((th.exp, (_build_chain(base, rest, th.exp), e)))
            return out
        if t.fn in self.closures and self.closures[t.fn] == len(t.args):
            return [(t.fn, t.args)]
        return []

    def derive(self, t: Term, known: frozenset, slots: Sequence[frozenset]) -> list[Option]:
        """All ways (slot sets, products) to make ``t`` available now."""
        if t in known:
            return [(frozenset(), ())]
        return self._avail(t, len(slots), slots)

    def _avail(self, u: Term, lim: int, slots) -> list[Option]:
        if lim < len(slots) and u in slots[lim]:
            return [(frozenset(), ())]
        if depth(u) > self.cap:
            return []
        out: list[Option] = []
        seen = set()
        for f, args in self.decompositions(u):
            for s in range(lim):
                for used, prods in self._avail_args(args, s, slots):
                    if s in used:
                        continue
                    opt = (used | {s}, _merge(prods, ((s, u),)))
                    key = (opt[0], frozenset(opt[1]))
                    if key not in seen:
                        seen.add(key)
                        out.append(opt)
        return out

    def _avail_args(self, args, s: int, slots) -> Iterator[Option]:
        if not args:
            yield (frozenset(), ())
            return
        first = self._avail(args[0], s, slots)
        if not first:
            return
        for used, prods in first:
            for used2, prods2 in self._avail_args(args[1:], s, slots):
                merged = _merge(prods, prods2)
                if merged is not None:
                    yield (used | used2, merged)

    # -- forward: every term slots can produce -------------------------

    def forward(self, known: frozenset, slots: Sequence[frozenset]) -> dict[Term, list[Option]]:
        """Map each producible term not in ``known`` to its derivation options."""
        th = self.theory
        # with constant right-hand sides, a rewrite step only yields a
        # constant that the same slot could build directly, so arguments of a
        # useful construction are strictly below the cap
        arg_cap = self.cap - 1
        items: list[tuple[Term, frozenset, tuple, int]] = []
        result: dict[Term, list[Option]] = {}
        for s, snap in enumerate(slots):
            dom = [(b, frozenset(), ()) for b in sorted(snap, key=term_key) if depth(b) <= arg_cap]
            dom += [(t, u, p) for t, u, p, d in items if d <= arg_cap]
            here: dict[tuple, tuple] = {}
            for f in sorted(self.closures):
                k = self.closures[f]
                if k == 0:
                    t = th.normalize(App(f))
                    here.setdefault((t, frozenset({s})), (t, frozenset({s}), ((s, t),)))
                    continue
                for combo in itertools.product(dom, repeat=k):
                    prods: tuple | None = ()
                    used = frozenset()
                    for _, u, p in combo:
                        if p:
                            used |= u
                            prods = _merge(prods, p) if prods else p
                            if prods is None:
                                break
                    if prods is None:
                        continue
                    t = th.normalize(App(f, tuple(c[0] for c in combo)))
                    if depth(t) > self.cap:
                        continue
                    used = used | {s}
                    key = (t, used)
                    if key not in here:
                        here[key] = (t, used, _merge(prods, ((s, t),)))
            items.extend((t, u, p, depth(t)) for t, u, p in here.values())
        for t, used, prods, _ in items:
            if t not in known:
                result.setdefault(t, []).append((used, prods))
        return result

    # -- stutter enabledness -------------------------------------------

    def closure_enabled(self, known: frozenset) -> bool:
        """Whether some construction step is enabled on ``known``."""
        if self.nullary:
            return True
        if not known:
            return False
        low = min(known, key=depth)
        if 1 + depth(low) <= self.cap:
            return any(k > 0 for k in self.closures.values())
        terms = sorted(known, key=term_key)
        th = self.theory
        for f, k in self.closures.items():
            for combo in itertools.product(terms, repeat=k):
                if depth(th.normalize(App(f, combo))) <= self.cap:
                    return True
        return False


def _merge(p1: tuple, p2: tuple) -> tuple | None:
    """Union of two product assignments, or None if a slot would make two terms.

    A slot performs one construction; its product may be used many times.
    """
    if not p1:
        return p2
    if not p2:
        return p1
    d = dict(p1)
    for s, u in p2:
        if d.setdefault(s, u) != u:
            return None
    return tuple(sorted(d.items()))


def apply_option(slots: Sequence[frozenset], option: Option) -> tuple[tuple[frozenset, ...], list[Term]]:
    """Remaining slots after spending ``option``, and the terms it materializes.

    Products of a spent slot were known from that slot's time on, so later
    remaining slots see them in their snapshots.
    """
    used, prods = option
    snaps = [set(s) for s in slots]
    for s, u in prods:
        for j in range(s + 1, len(snaps)):
            snaps[j].add(u)
    remaining = tuple(frozenset(snaps[j]) for j in range(len(snaps)) if j not in used)
    return remaining, [u for _, u in prods]
