"""Bounded checking of trace inclusions and trace properties.

``check_inclusion`` walks the left system's traces breadth first and, for
every trace prefix, keeps the set of right states that can produce it.  A
rule-name hint keeps those sets small: right steps taken by a rule
corresponding to the left step are tried first, and the exact set is
recomputed from the root only when the hinted one fails.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .msr import EMPTY, BudgetExceeded, Multiset, collision_free, fresh_labels, show_label, trace_set

__all__ = ["InclusionVerdict", "accepts", "check_inclusion", "rule_base"]

KINDS = ("full", "filtered", "collision-free")


@dataclass
class InclusionVerdict:
    claim: str
    depth: int
    bounds: dict
    status: str  # "holds-at-bound" or "counterexample"
    kind: str = "full"
    witness: list | None = None
    detail: str = ""
    stats: dict = field(default_factory=dict)
    # directed property search: the (label, state) steps behind the witness
    run: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def holds(self) -> bool:
        return self.status == "holds-at-bound"

    def to_json(self) -> dict:
        return {
            "claim": self.claim,
            "depth": self.depth,
            "bounds": self.bounds,
            "status": self.status,
            "kind": self.kind,
            "witness": self.witness,
            "detail": self.detail,
            "stats": self.stats,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def show_trace(trace: Sequence) -> list:
    return [show_label(a) if isinstance(a, Multiset) else [str(a)] for a in trace]


_SUFFIX = re.compile(r"_(env|role)$")


def rule_base(rule: str) -> set[str]:
    """Rule ids a (possibly composed or split) step corresponds to."""
    return {_SUFFIX.sub("", part) for part in rule.split("|")}


def _hint_ok(left_rule: str, right_rule: str) -> bool:
    return bool(rule_base(left_rule) & rule_base(right_rule))


def _identity(a):
    return a


def accepts(lts, trace: Sequence, filtered: bool = False, slack: int = 0) -> list:
    """States reached by runs of ``lts`` producing ``trace`` (empty if none).

    With ``filtered`` the run may interleave up to ``slack`` unlabeled steps
    before each label and after the last one.
    """
    states = _closure(lts, {lts.initial()}, slack) if filtered else {lts.initial()}
    for a in trace:
        nxt = set()
        for s in states:
            for tr in lts.transitions(s, a):
                nxt.add(tr.target)
        states = _closure(lts, nxt, slack) if filtered else nxt
        if not states:
            return []
    return sorted(states, key=repr)


def _closure(lts, states: set, slack: int) -> set:
    out = set(states)
    frontier = set(states)
    for _ in range(slack):
        nxt = set()
        for s in frontier:
            for tr in lts.transitions(s, EMPTY):
                if tr.target not in out:
                    nxt.add(tr.target)
        out |= nxt
        frontier = nxt
        if not frontier:
            break
    return out


class _Right:
    """Exact right-hand state sets per trace, computed on demand."""

    def __init__(self, lts, filtered: bool, slack: int, cap: int):
        self.lts = lts
        self.filtered = filtered
        self.slack = slack
        self.cap = cap
        self.work = 0
        self.exact: dict[tuple, set] = {}

    def tick(self, n=1):
        self.work += n
        if self.work > self.cap:
            raise BudgetExceeded(f"right-side search exceeded {self.cap} transitions")

    def initial(self) -> set:
        return {self.lts.initial()}

    def exact_set(self, trace: tuple) -> set:
        hit = self.exact.get(trace)
        if hit is not None:
            return hit
        if not trace:
            states = {self.lts.initial()}
        else:
            states = set()
            for s in self.exact_set(trace[:-1]):
                trs = self.lts.transitions(s, trace[-1])
                self.tick(len(trs) + 1)
                states.update(t.target for t in trs)
        if self.filtered:
            states = _closure(self.lts, states, self.slack)
        self.exact[trace] = states
        return states

    def advance(self, src, label, left_rule: str | None, need_targets: bool) -> set:
        """Right states after one step labeled ``label``, hinted by rule name.

        A hint is a preference: if no step of a corresponding rule exists,
        every producing step is accepted.
        """
        hinted, other = set(), set()
        for s in src:
            trs = self.lts.transitions(s, label)
            self.tick(len(trs) + 1)
            for t in trs:
                if left_rule is not None and _hint_ok(left_rule, t.rule):
                    hinted.add(t.target)
                else:
                    other.add(t.target)
            if (hinted or other) and not need_targets:
                break
        return hinted or other

    def silent(self, src: set, left_rule: str) -> set:
        """Follow an unlabeled left step: stay, or take a corresponding unlabeled step."""
        out = set(src)
        for s in src:
            trs = self.lts.transitions(s, EMPTY)
            self.tick(len(trs) + 1)
            out.update(t.target for t in trs if _hint_ok(left_rule, t.rule))
        return out


def check_inclusion(
    left,
    right,
    depth: int,
    relabel: Callable | None = None,
    kind: str = "full",
    claim: str = "inclusion",
    bounds: dict | None = None,
    slack: int | None = None,
    cap: int = 5_000_000,
    confirm: bool = True,
) -> InclusionVerdict:
    """Decide whether every left trace of length <= ``depth`` is a right trace.

    ``kind`` selects full traces, filtered traces (unlabeled steps removed)
    or collision-free filtered traces.  ``relabel`` maps left labels before
    comparison.  Filtered right runs may take up to ``slack`` unlabeled
    steps around each label (default ``depth``) when the hinted search
    fails.

    The walk pairs each left run with right states reached by steps of
    corresponding rules; when that hinted set cannot produce a label, the
    exact set of right states for the trace is computed from the root.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown trace kind {kind!r}")
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    relabel = relabel or _identity
    filtered = kind != "full"
    slack = depth if slack is None else slack
    t0 = time.perf_counter()
    rs = _Right(right, filtered, slack, cap)
    # trace -> left state -> hinted right states
    layer: dict[tuple, dict] = {(): {left.initial(): rs.initial()}}
    checked: set = {()}
    left_work = 0
    for k in range(depth):
        last = k == depth - 1
        nxt: dict[tuple, dict] = {}
        for trace in sorted(layer, key=_tkey):
            pairs = layer[trace]
            for ls in _ordered(pairs):
                rset = pairs[ls]
                for tr in left.transitions(ls):
                    left_work += 1
                    if left_work > cap:
                        raise BudgetExceeded(f"left-side search exceeded {cap} transitions")
                    a = relabel(tr.label)
                    if filtered and not a:
                        if not last:
                            r2 = rs.silent(rset, tr.rule)
                            nxt.setdefault(trace, {}).setdefault(tr.target, set()).update(r2)
                        continue
                    t2 = trace + (a,)
                    if kind == "collision-free" and _collides(t2):
                        continue
                    if last and t2 in checked:
                        continue
                    r2 = rs.advance(rset, a, tr.rule, need_targets=not last)
                    if not r2:
                        r2 = rs.exact_set(t2) if not last or t2 not in rs.exact else rs.exact[t2]
                        if not r2:
                            return _counterexample(left, t2, relabel, kind, claim, depth, bounds, right, slack, confirm, t0, checked, left_work, rs)
                    checked.add(t2)
                    if not last:
                        nxt.setdefault(t2, {}).setdefault(tr.target, set()).update(r2)
        layer = nxt
    return InclusionVerdict(
        claim,
        depth,
        bounds or {},
        "holds-at-bound",
        kind,
        stats=_stats(t0, checked, left_work, rs),
    )


def _ordered(pairs: dict):
    if len(pairs) > 256:
        return list(pairs)
    return sorted(pairs, key=repr)


def _tkey(trace: tuple) -> tuple:
    return tuple(repr(a) for a in trace)


def _collides(trace: tuple) -> bool:
    seen = {}
    for i, a in enumerate(trace):
        if not isinstance(a, Multiset):
            continue
        for n in fresh_labels(a):
            if seen.setdefault(n, i) != i:
                return True
    return False


def _stats(t0, traces, left_work, rs) -> dict:
    return {
        "seconds": round(time.perf_counter() - t0, 3),
        "left_traces": len(traces),
        "left_transitions": left_work,
        "right_transitions": rs.work,
    }


def _counterexample(left, trace, relabel, kind, claim, depth, bounds, right, slack, confirm, t0, checked, left_work, rs):
    detail = []
    if confirm:
        if not _replays(left, trace, relabel, kind):
            raise AssertionError("counterexample does not replay in the left system")
        detail.append("replayed in left system")
        verdict = _confirm_missing(right, trace, kind, slack)
        if verdict is None:
            detail.append("right-side materialization skipped (budget)")
        elif verdict:
            raise AssertionError("counterexample refuted by right-side materialization")
        else:
            detail.append("absent from materialized right trace set")
    return InclusionVerdict(
        claim,
        depth,
        bounds or {},
        "counterexample",
        kind,
        witness=show_trace(trace),
        detail="; ".join(detail),
        stats=_stats(t0, checked, left_work, rs),
    )


def _replays(left, trace, relabel, kind) -> bool:
    """Re-execute the left system step by step looking for ``trace``."""
    filtered = kind != "full"
    frontier = {(left.initial(), 0)}
    budget = len(trace) * 4 + 4
    for _ in range(budget):
        nxt = set()
        for s, i in frontier:
            if i == len(trace):
                return True
            for tr in left.transitions(s):
                a = relabel(tr.label)
                if filtered and not a:
                    nxt.add((tr.target, i))
                elif a == trace[i]:
                    nxt.add((tr.target, i + 1))
        if any(i == len(trace) for _, i in nxt):
            return True
        frontier = nxt
    return False


def _confirm_missing(right, trace, kind, slack) -> bool | None:
    """Whether ``trace`` is a right trace, by materializing the right trace set.

    Returns None when the materialization exceeds its budget.
    """
    n = len(trace)
    d = n + (slack * (n + 1) if kind != "full" else 0)
    d = min(d, n + 2) if kind != "full" else d
    try:
        trs = trace_set(right, d, cap=2_000_000)
    except BudgetExceeded:
        return None
    if kind == "full":
        return tuple(trace) in trs
    filt = {tuple(a for a in t if a) for t in trs}
    return tuple(trace) in filt


# -- the soundness chain -------------------------------------------------------


def chain_universe(model, rids, fresh: int = 2, pub: int = 2, term_depth: int = 1, msg_depth: int = 1):
    """Universe shared by the chain checks: model names, attacker pools, thread ids."""
    return model.universe(fresh, pub, term_depth, msg_depth).with_names(fresh=[r for _, r in rids])


def input_universe(u, fresh: int = 2, pub: int = 1):
    """Small name pools from which seeded inputs draw free values."""
    from .msr import Universe
    from .terms import Fresh, Pub

    return Universe(
        tuple(Fresh(f"n{i + 1}") for i in range(fresh)),
        tuple(Pub(f"p{i + 1}") for i in range(pub)),
        u.term_depth,
        u.msg_depth,
    )


def _bounds(u, **extra) -> dict:
    b = u.bounds()
    # Eq-restriction actions are checks, not observations: absent from traces
    b["eq_labels"] = "dropped"
    b.update(extra)
    return b


def check_l1(model, intf, u, depth: int, **kw) -> InclusionVerdict:
    from .msr import model_lts

    left = model_lts(intf.model, u, "eq")
    right = model_lts(model, u, "eq")
    return check_inclusion(left, right, depth, kind="filtered", claim="L1", bounds=_bounds(u), **kw)


def check_l2(split, u, rids, depth: int, **kw) -> InclusionVerdict:
    from .msr import model_lts
    from .transform import compose, env_component, role_component

    comps = [(role, rid, role_component(split, role, rid, u)) for role, rid in rids]
    left = compose(comps, env_component(split, u), split.sync)
    right = model_lts(split.intf.model, u, "eq")
    return check_inclusion(left, right, depth, kind="full", claim="L2", bounds=_bounds(u, rids=[str(r) for _, r in rids]), **kw)


def check_t1(split, role: str, rid, u, depth: int, impl_split=None, inputs=None, **kw) -> InclusionVerdict:
    """Spec of ``role`` against the role component.

    Without ``impl_split`` the relabeled spec must be included in the
    role's rules.  With it, the given implementation's role component must
    stay within the permissions of the spec generated from ``split``.
    """
    from .iospec import gen_iospec, input_seeds, pi, spec_lts
    from .msr import MsrLTS
    from .transform import fix_rid, role_component

    spec = gen_iospec(split, role)
    iu = inputs or input_universe(u)
    bounds = _bounds(u, role=role, rid=str(rid), input_pools=iu.bounds())
    if impl_split is None:
        left = spec_lts(spec, rid, split.theory, iu, split.restrictions)
        right = role_component(split, role, rid, u)
        return check_inclusion(left, right, depth, relabel=pi, kind="full", claim=f"T1({role})", bounds=bounds, **kw)
    rules = fix_rid(impl_split.roles[role], impl_split.facts, role, rid)
    left = MsrLTS(rules, impl_split.theory, iu, "eq", impl_split.restrictions, seeds=input_seeds(rules, impl_split.theory, iu))
    right = spec_lts(spec, rid, split.theory, u, split.restrictions, inputs="passive").relabeled()
    return check_inclusion(left, right, depth, kind="full", claim=f"T1({role})", bounds=bounds, **kw)


def check_composed(model, split, u, rids, depth: int, **kw) -> InclusionVerdict:
    """Specs of all threads composed with the environment, against the model."""
    from .iospec import gen_iospec, spec_lts
    from .msr import model_lts
    from .transform import compose, env_component

    specs = {role: gen_iospec(split, role) for role in split.roles}
    comps = [
        (role, rid, spec_lts(specs[role], rid, split.theory, u, split.restrictions, inputs="passive").relabeled())
        for role, rid in rids
    ]
    left = compose(comps, env_component(split, u), split.sync)
    right = model_lts(model, u, "eq")
    return check_inclusion(left, right, depth, kind="filtered", claim="composed", bounds=_bounds(u, rids=[str(r) for _, r in rids]), **kw)


def check_end_to_end(model, rids, depth: int, u=None, **kw) -> list[InclusionVerdict]:
    """Every link of the refinement chain for the given thread ids."""
    from .transform import build_interface, split_io

    u = u or chain_universe(model, rids)
    intf = build_interface(model)
    split = split_io(intf)
    out = [check_l1(model, intf, u, depth, **kw), check_l2(split, u, rids, depth, **kw)]
    for role in sorted({role for role, _ in rids}):
        rid = next(r for ro, r in rids if ro == role)
        out.append(check_t1(split, role, rid, u, depth, **kw))
    out.append(check_composed(model, split, u, rids, depth, **kw))
    return out


# -- trace properties ----------------------------------------------------------


@dataclass(frozen=True)
class Secrecy:
    """No trace has ``fact(..s..)`` (argument ``pos``) together with ``K(s)``."""

    fact: str = "Secret"
    pos: int = 0


@dataclass(frozen=True)
class Agreement:
    """Every ``commit`` label has an earlier ``running`` label agreeing on ``pairs``.

    ``pairs`` lists (commit position, running position) argument pairs.
    """

    commit: str
    running: str
    pairs: tuple[tuple[int, int], ...]


def _check_facts(model, prop) -> None:
    names = [prop.fact] if isinstance(prop, Secrecy) else [prop.commit, prop.running]
    for n in names:
        s = model.facts.get(n)
        if s is None or s.cls != "action":
            raise ValueError(f"{n} is not a declared action fact")


class _PropSearch:
    """Shared plumbing for the exhaustive and the directed property search."""

    def __init__(self, model, prop, u, budget: int):
        from .msr import FRESH, K, model_lts

        self.model = model
        self.prop = prop
        self.u = u
        self.budget = budget
        self.lts = model_lts(model, u, "eq", lazy=True)
        if not self.lts.lazy:
            raise ValueError("property search needs a theory whose rewrite rules have constant right-hand sides")
        self.th = model.theory
        self.K = K
        self.FRESH = FRESH
        self.pool = list(u.fresh)
        # In-patterns of rules consuming attacker input, with their other premises
        self.consumers = [
            (r, i) for r in self.lts._active for i, f in enumerate(r.lhs) if f.name == "In"
        ]
        self.non_in = frozenset(r.id for r in self.lts._active) | {"MD_construct"}
        self.work = 0

    def steps(self, state) -> list:
        """Transitions of the exact system, with attacker inputs restricted to
        messages some rule can consume in the target state."""
        from .msr import Fact

        out = list(self.lts.transitions(state, None, self.non_in))
        patterns = self.in_patterns(state.facts)
        if not patterns:
            return out
        known = frozenset(f.args[0] for f in state.facts.by_name.get(self.K, ()))
        cands = set(known)
        if state.slots:
            cands.update(self.lts._forward(known, state.slots))
        for t in sorted(cands, key=lambda t: repr(t)):
            if self.consumable(t, patterns):
                out.extend(self.lts.transitions(state, Multiset((Fact(self.K, (t,)),))))
        return out

    def tick(self):
        self.work += 1
        if self.work > self.budget:
            raise BudgetExceeded(f"property search exceeded {self.budget} nodes")

    def canonical_fresh(self, tr, used: frozenset) -> bool:
        """Only the first unused pool name may be generated (names are symmetric)."""
        for f in tr.label:
            if f.name == self.FRESH:
                n = f.args[0]
                if n in used:
                    return False
                first = next((m for m in self.pool if m not in used), None)
                if n != first:
                    return False
        return True

    def new_fresh(self, tr) -> list:
        return [f.args[0] for f in tr.label if f.name == self.FRESH]

    def events(self, label: Multiset):
        return [f for f in label if f.name in self._watched]

    @property
    def _watched(self) -> set:
        p = self.prop
        return {p.fact} if isinstance(p, Secrecy) else {p.commit, p.running}

    def in_patterns(self, facts: Multiset) -> list:
        """In-patterns whose other premises are present, with the bindings they fix."""
        out = []
        for r, i in self.consumers:
            partial = [{}]
            for j, f in enumerate(r.lhs):
                if j == i:
                    continue
                nxt = []
                for s in partial:
                    for cand in facts.by_name.get(f.name, ()):
                        nxt.extend(match_args_(self.th, f.args, cand.args, s))
                partial = nxt
                if not partial:
                    break
            for s in partial:
                out.append((r.lhs[i].args[0], s))
        return out

    def consumable(self, t, patterns) -> bool:
        return any(self.th.match(p, t, s) for p, s in patterns)


def match_args_(th, pats, targets, sigma):
    from .msr import match_args

    return match_args(th, pats, targets, sigma)


def _agreement_ok(prop: Agreement, trace_events) -> bool:
    running = []
    for f in trace_events:
        if f.name == prop.running:
            running.append(f)
        elif f.name == prop.commit:
            if not any(all(f.args[c] == r.args[q] for c, q in prop.pairs) for r in running):
                return False
    return True


def check_property(
    model,
    prop,
    depth: int,
    u=None,
    search: str = "exhaustive",
    budget: int = 2_000_000,
    instances: int = 1,
) -> InclusionVerdict:
    """Search collision-free traces of length <= ``depth`` for a violation.

    ``exhaustive`` explores every run up to renaming of fresh names (with
    attacker inputs taken only when some rule can consume them right away,
    which preserves the labels a run can produce); a "holds" answer is only
    given by this mode.  ``directed`` builds attacker messages on demand
    right before they are sent, reaches much deeper, and only ever reports
    counterexamples; when it finds none it raises ``BudgetExceeded``.  It
    fires each protocol rule (other than ``Fresh``) at most ``instances``
    times.  Witnesses are replayed step by step in the model.
    """
    if search not in ("exhaustive", "directed"):
        raise ValueError(f"unknown search mode {search!r}")
    _check_facts(model, prop)
    u = u or model.universe()
    claim = "SEC" if isinstance(prop, Secrecy) else "AGREE"
    bounds = _bounds(u, search=search) if search == "exhaustive" else _bounds(u, search=search, instances=instances)
    t0 = time.perf_counter()
    ps = _PropSearch(model, prop, u, budget)
    if search == "exhaustive":
        found = _exhaustive(ps, depth)
    else:
        found = _directed(ps, depth, instances)
    stats = {"seconds": round(time.perf_counter() - t0, 3), "nodes": ps.work}
    if found is None:
        if search == "directed":
            raise BudgetExceeded(f"directed search found no violation within depth {depth}; no verdict")
        return InclusionVerdict(claim, depth, bounds, "holds-at-bound", "collision-free", stats=stats)
    if search == "directed":
        from .msr import model_lts

        if not replay_run(model_lts(model, u, "eq", lazy=False), found):
            raise AssertionError("property witness does not replay in the model")
        run = tuple(found)
        found = [lab for lab, _ in found]
    trace = tuple(found)
    if search == "exhaustive" and not accepts(ps.lts, trace):
        raise AssertionError("property witness does not replay in the model")
    if _holds_on(prop, trace):
        raise AssertionError("property witness does not violate the property")
    return InclusionVerdict(
        claim,
        depth,
        bounds,
        "counterexample",
        "collision-free",
        witness=show_trace(trace),
        detail=f"witness of length {len(trace)} replayed in the model",
        stats=stats,
        run=run if search == "directed" else None,
    )


def _holds_on(prop, trace) -> bool:
    if _collides(trace):
        return True
    if isinstance(prop, Secrecy):
        secrets = {f.args[prop.pos] for a in trace for f in a if f.name == prop.fact}
        known = {f.args[0] for a in trace for f in a if f.name == "K"}
        return not (secrets & known)
    return _agreement_ok(prop, [f for a in trace for f in a])


def _violation(ps: _PropSearch, prop, trace, facts, slots, steps_left: int):
    """Suffix completing ``trace`` into a violation, or None."""
    from .msr import Fact

    if isinstance(prop, Agreement):
        return () if not _agreement_ok(prop, [f for a in trace for f in a]) else None
    secrets = {f.args[prop.pos] for a in trace for f in a if f.name == prop.fact}
    if not secrets:
        return None
    emitted = {f.args[0] for a in trace for f in a if f.name == ps.K}
    for s in sorted(secrets, key=lambda t: repr(t)):
        if s in emitted:
            return ()
    if steps_left < 1:
        return None
    known = frozenset(f.args[0] for f in facts.by_name.get(ps.K, ()))
    for s in sorted(secrets, key=lambda t: repr(t)):
        if ps.lts.deducer.derive(s, known, slots):
            return (Multiset((Fact(ps.K, (s,)),)),)
    return None


def _exhaustive(ps: _PropSearch, depth: int):
    from .msr import LazyState

    prop = ps.prop
    start = (LazyState(Multiset()), (), frozenset())
    layer = {start[0]: [(start[1], start[2])]}
    seen: set = set()
    for k in range(depth + 1):
        nxt: dict = {}
        for state, runs in layer.items():
            for trace, used in runs:
                ps.tick()
                v = _violation(ps, prop, trace, state.facts, state.slots, depth - k)
                if v is not None:
                    return trace + v
                if k == depth:
                    continue
                for tr in ps.steps(state):
                    if not ps.canonical_fresh(tr, used):
                        continue
                    used2 = used | frozenset(ps.new_fresh(tr))
                    t2 = trace + (tr.label,)
                    key = (tr.target, _abstract(prop, t2, ps), used2)
                    if key in seen:
                        continue
                    seen.add(key)
                    nxt.setdefault(tr.target, []).append((t2, used2))
        layer = nxt
    return None


def _abstract(prop, trace, ps) -> tuple:
    """What of a trace prefix matters for the rest of the search."""
    if isinstance(prop, Secrecy):
        secrets = frozenset(f.args[prop.pos] for a in trace for f in a if f.name == prop.fact)
        ks = frozenset(f.args[0] for a in trace for f in a if f.name == ps.K)
        return (secrets, ks)
    running = frozenset(f for a in trace for f in a if f.name == prop.running)
    return (running,)


class _Planner:
    """Cheapest way to make a term known: public names to announce and
    constructions to perform, all from the current knowledge."""

    def __init__(self, ps: _PropSearch, known: frozenset, outs: frozenset = frozenset()):
        self.ps = ps
        self.known = known
        self.outs = outs
        self.deducer = ps.lts.deducer
        self.pubs = set(ps.u.pub)
        self.memo: dict = {}

    def plan(self, t):
        """(public names, outputs to learn, constructed terms) or None."""
        from .terms import Pub, depth

        none = frozenset()
        if t in self.known:
            return (none, none, none)
        if t in self.memo:
            return self.memo[t]
        self.memo[t] = None  # cycle guard
        best = None
        if t in self.outs:
            best = (none, frozenset({t}), none)
        elif type(t) is Pub and t in self.pubs:
            best = (frozenset({t}), none, none)
        elif depth(t) <= self.deducer.cap:
            for _, args in self.deducer.decompositions(t):
                plan = (none, none, frozenset({t}))
                for a in args:
                    p = self.plan(a)
                    if p is None:
                        plan = None
                        break
                    plan = (plan[0] | p[0], plan[1] | p[1], plan[2] | p[2])
                if plan is not None and (best is None or _size(plan) < _size(best)):
                    best = plan
        self.memo[t] = best
        return best

    def cost(self, t) -> int | None:
        p = self.plan(t)
        return None if p is None else _size(p)

    def candidates(self, pattern, sigma: dict) -> list:
        """Ground instances of ``pattern`` buildable from the knowledge.

        Variables left open by the pattern range over known terms, public
        names and constants; this under-approximates the attacker, which is
        fine for finding attacks.
        """
        from .terms import App, Var

        th = self.ps.th
        out = []
        for term, _ in self._gen(th.normalize(substitute_(pattern, sigma)), sigma):
            if term not in out:
                out.append(term)
        return out

    def _leaves(self, v):
        from .terms import App, Fresh, Pub

        avail = self.known | self.outs
        if v.sort == "fresh":
            return [t for t in avail if type(t) is Fresh]
        pubs = sorted(self.pubs | {t for t in avail if type(t) is Pub}, key=repr)
        if v.sort == "pub":
            return pubs
        consts = [self.ps.th.normalize(App(f)) for f in self.deducer.nullary]
        atoms = [t for t in sorted(avail, key=repr) if type(t) is Fresh]
        return list(dict.fromkeys(atoms + pubs + consts))

    def _gen(self, p, sigma):
        from .terms import App, Var, is_ground

        th = self.ps.th
        if is_ground(p):
            if self.plan(p) is not None:
                yield p, sigma
            return
        if type(p) is Var:
            for t in self._leaves(p):
                for s in th.match(p, t, sigma):
                    yield t, s
            return
        for t in sorted(self.known | self.outs, key=repr):
            for s in th.match(p, t, sigma):
                yield t, s
        if type(p) is App and p.fn in self.deducer.closures:
            for args, s in self._gen_args(p.args, sigma):
                t = th.normalize(App(p.fn, args))
                if self.plan(t) is not None:
                    yield t, s

    def _gen_args(self, args, sigma):
        if not args:
            yield (), sigma
            return
        head = self.ps.th.normalize(substitute_(args[0], sigma))
        for t, s in self._gen(head, sigma):
            for rest, s2 in self._gen_args(args[1:], s):
                yield (t,) + rest, s2


def _size(plan) -> int:
    return sum(len(x) for x in plan)


def substitute_(t, sigma):
    from .terms import substitute

    return substitute(t, sigma)


_TRACE_LEVELS = False


def _directed(ps: _PropSearch, depth: int, instances: int = 1):
    """Breadth-first over states, sending attacker messages built on demand.

    Announcing public names, learning outputs and constructing terms happen
    inside the step that sends a message (or reveals a secret), right
    before it, and a message is only sent together with the protocol step
    that receives it.  Protocol rules draw agent names from the attacker's
    pool.
    """
    from .msr import IN, OUT, Fact, LazyState, MsrLTS, Universe

    prop = ps.prop
    lts = ps.lts
    attacker_pubs = tuple(p for p in ps.u.pub if p.name.startswith("p")) or ps.u.pub
    small = Universe(ps.u.fresh, attacker_pubs, ps.u.term_depth, ps.u.msg_depth)
    normal_lts = MsrLTS(lts.rules, lts.theory, small, "eq", lts.restrictions, lazy=True)
    consumers = frozenset(r.id for r, _ in ps.consumers)
    normal = frozenset(r.id for r in lts._active if r.id not in ("MD_Pub", "MD_Out")) - consumers
    K = ps.K
    buckets: list[list] = [[] for _ in range(depth + 1)]
    user = {r.id for r in lts.rules if not r.id.startswith("MD_") and r.id != "Fresh"}
    buckets[0].append((Multiset(), (), frozenset(), ()))  # state, run, names used, rules fired
    seen: dict = {}
    for k in range(depth + 1):
        for facts, run, used, fired in buckets[k]:
            ps.tick()
            trace = tuple(lab for lab, _ in run)
            known = frozenset(f.args[0] for f in facts.by_name.get(K, ()))
            outs = frozenset(f.args[0] for f in facts.by_name.get(OUT, ()))
            planner = _Planner(ps, known, outs)
            v = _directed_violation(ps, prop, trace, planner, depth - k)
            if v is not None:
                return run + (_macro_run(facts, v[0], known, v[1]) if v else ())
            if k == depth:
                continue
            succ = []
            for tr in normal_lts.transitions(LazyState(facts), None, normal):
                if not ps.canonical_fresh(tr, used):
                    continue
                fired2 = fired
                if tr.rule in user:
                    if fired.count(tr.rule) >= instances:
                        continue
                    fired2 = tuple(sorted(fired + (tr.rule,)))
                succ.append((1, tr.target.facts, ((tr.label, tr.target.facts),), used | frozenset(ps.new_fresh(tr)), fired2))
            for pat, s in ps.in_patterns(facts):
                for t in planner.candidates(pat, s):
                    plan = planner.plan(t)
                    n = _size(plan) + 1
                    if k + n + 1 > depth:
                        continue
                    msg = Fact(IN, (t,))
                    macro = _macro_run(facts, plan, known, t)
                    st = LazyState(macro[-1][1])
                    before = st.facts.count(msg)
                    for tr in normal_lts.transitions(st, None, consumers):
                        if tr.target.facts.count(msg) >= before or not ps.canonical_fresh(tr, used):
                            continue
                        if fired.count(tr.rule) >= instances:
                            continue
                        fired2 = tuple(sorted(fired + (tr.rule,)))
                        labels = macro + ((tr.label, tr.target.facts),)
                        succ.append((n + 1, tr.target.facts, labels, used | frozenset(ps.new_fresh(tr)), fired2))
            for n, facts2, steps, used2, fired2 in succ:
                r2 = run + steps
                t2 = trace + tuple(lab for lab, _ in steps)
                key = (facts2, _abstract(prop, t2, ps)[:1], used2, fired2)
                if key in seen and seen[key] <= k + n:
                    continue
                seen[key] = k + n
                buckets[k + n].append((facts2, r2, used2, fired2))
        if _TRACE_LEVELS:
            print("level", k, len(buckets[k]), ps.nodes if hasattr(ps, "nodes") else "", flush=True)
        buckets[k] = []
    return None


def _macro_run(facts: Multiset, plan, known, t) -> tuple:
    """Concrete attacker steps realizing ``plan``, then sending ``t`` if given.

    Public names are announced and outputs learned first; constructions
    follow in order of term depth, so every argument is known in time.
    """
    from .msr import IN, OUT, Fact, _rewrite
    from .terms import depth

    pubs, outs, cons = plan
    steps = []
    for u in sorted(pubs, key=repr):
        facts = _rewrite(facts, (), [Fact("K", (u,), True)])
        steps.append((EMPTY, facts))
    for u in sorted(outs, key=repr):
        facts = _rewrite(facts, [Fact(OUT, (u,))], [Fact("K", (u,), True)])
        steps.append((EMPTY, facts))
    for u in sorted(cons, key=lambda c: (depth(c), repr(c))):
        if u in known:
            continue
        facts = _rewrite(facts, (), [Fact("K", (u,), True)])
        steps.append((EMPTY, facts))
    if t is not None:
        facts = _rewrite(facts, (), [Fact(IN, (t,))])
        steps.append((Multiset((Fact("K", (t,)),)), facts))
    return tuple(steps)


def replay_run(lts, run) -> bool:
    """Whether each recorded state is a successor of the previous one under its label."""
    state = lts.initial()
    for label, target in run:
        if not any(tr.target == target for tr in lts.transitions(state, label)):
            return False
        state = target
    return True


def _directed_violation(ps: _PropSearch, prop, trace, planner: _Planner, steps_left: int):
    from .msr import Fact

    if isinstance(prop, Agreement):
        return () if not _agreement_ok(prop, [f for a in trace for f in a]) else None
    secrets = {f.args[prop.pos] for a in trace for f in a if f.name == prop.fact}
    emitted = {f.args[0] for a in trace for f in a if f.name == ps.K}
    for s in sorted(secrets, key=repr):
        if s in emitted:
            return ()
    for s in sorted(secrets, key=repr):
        c = planner.cost(s)
        if c is not None and c + 1 <= steps_left:
            return planner.plan(s), s
    return None
