"""Model-to-components pipeline.

* ``gen_env_rules``: attacker deduction rules plus the freshness rule.
* ``build_interface``: role rules talk to buffered copies of I/O facts; one
  I/O rule per (I/O fact, role) moves facts between environment and buffer.
* ``split_io``: each I/O rule becomes a role half and an environment half
  sharing a synchronization label.
* ``compose``: interleaving of role components synchronized with the
  environment on those labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .msr import (
    EMPTY,
    FR,
    FRESH,
    IN,
    K,
    OUT,
    Fact,
    FactSymbol,
    MsrLTS,
    MsrModel,
    Multiset,
    Rule,
    Transition,
    Universe,
)
from .terms import App, BudgetExceeded, Fresh, Term, Theory, Var, substitute, term_key

__all__ = [
    "gen_env_rules",
    "InterfaceModel",
    "SyncLabel",
    "SplitSystem",
    "build_interface",
    "split_io",
    "role_component",
    "env_component",
    "ComposedLTS",
    "compose",
    "rid_instances",
    "split_to_json",
]

RID = Var("rid", "fresh")


def gen_env_rules(theory: Theory) -> list[Rule]:
    """Message deduction rules for the theory's signature and the Fresh rule."""
    x = Var("x")
    rules = [
        Rule("MD_Out", (Fact(OUT, (x,)),), (), (Fact(K, (x,), True),), origin="md"),
        Rule("MD_In", (Fact(K, (x,), True),), (Fact(K, (x,)),), (Fact(IN, (x,)),), origin="md"),
        Rule("MD_Pub", (), (), (Fact(K, (Var("x", "pub"),), True),), origin="md"),
        Rule("MD_Fr", (Fact(FR, (Var("x", "fresh"),)),), (), (Fact(K, (Var("x", "fresh"),), True),), origin="md"),
    ]
    for name in sorted(theory.symbols):
        sym = theory.symbols[name]
        xs = tuple(Var(f"x{i + 1}") for i in range(sym.arity))
        rules.append(
            Rule(
                f"MD_{name}",
                tuple(Fact(K, (v,), True) for v in xs),
                (),
                (Fact(K, (App(name, xs),), True),),
                origin="md-closure",
            )
        )
    fx = Var("x", "fresh")
    rules.append(Rule("Fresh", (), (Fact(FRESH, (fx,)),), (Fact(FR, (fx,)),), origin="fresh"))
    return rules


def buffer_name(fact: str, role: str) -> str:
    return f"{fact}_{role}"


def setup_name(role: str) -> str:
    return f"Setup_{role}"


def sync_name(fact: str, role: str) -> str:
    return f"Sync_{fact}_{role}"


@dataclass(frozen=True)
class SyncLabel:
    """Schema of a synchronization label ``name(rid, x1..xn)``."""

    name: str
    fact: str
    role: str
    arity: int
    direction: str  # "in", "out" or "setup"
    rule: str  # id of the originating I/O rule


@dataclass
class InterfaceModel:
    model: MsrModel  # the whole interface model as one rule set
    env_rules: list[Rule]  # R_env minus setup rules
    io_rules: dict[str, list[Rule]]  # per role, setup rules included
    role_rules: dict[str, list[Rule]]  # rewritten protocol rules per role
    buffers: dict[str, dict[str, str]]  # role -> fact -> buffer fact name
    in_facts: list[str]  # Σ_in without Setup facts
    out_facts: list[str]


def _rid_of(rule: Rule, model: MsrModel, role: str) -> Term:
    for f in rule.lhs + rule.rhs:
        s = model.facts.get(f.name)
        if s is not None and (s.cls in ("state", "buffer") and s.role == role or f.name == setup_name(role)):
            return f.args[0]
    raise ValueError(f"rule {rule.id} carries no thread id")


def build_interface(model: MsrModel) -> InterfaceModel:
    facts = dict(model.facts)
    setups = {setup_name(r) for r in model.roles}
    in_facts = sorted(n for n, s in facts.items() if s.cls == "in" and n not in setups)
    out_facts = sorted(n for n, s in facts.items() if s.cls == "out")
    io_facts = set(in_facts) | set(out_facts)
    buffers: dict[str, dict[str, str]] = {}
    for role in model.roles:
        buffers[role] = {}
        for f in in_facts + out_facts:
            b = buffer_name(f, role)
            if b in facts:
                raise ValueError(f"buffer fact name {b} clashes with a declared fact")
            base = facts[f]
            facts[b] = FactSymbol(b, base.arity + 1, base.persistent, "buffer", role)
            buffers[role][f] = b

    env_rules, io_rules, role_rules = [], {r: [] for r in model.roles}, {r: [] for r in model.roles}
    for r in model.rules:
        if r.role is None:
            made = [f.name for f in r.rhs if f.name in setups]
            if made:
                io_rules[made[0][len("Setup_"):]].append(replace(r, origin="setup"))
            else:
                env_rules.append(r)
            continue
        rid = _rid_of(r, model, r.role)
        buf = buffers[r.role]

        def rewrite(f: Fact) -> Fact:
            if f.name in io_facts:
                return Fact(buf[f.name], (rid,) + f.args, f.persistent)
            return f

        role_rules[r.role].append(
            replace(r, lhs=tuple(map(rewrite, r.lhs)), rhs=tuple(map(rewrite, r.rhs)))
        )

    for role in model.roles:
        generated = []
        for f in in_facts + out_facts:
            s = facts[f]
            xs = tuple(Var(f"x{i + 1}", "fresh" if f == FR else "msg") for i in range(s.arity))
            env_fact = Fact(f, xs, s.persistent)
            buf_fact = Fact(buffers[role][f], (RID,) + xs, s.persistent)
            if f in in_facts:
                generated.append(Rule(f"IO_{f}_{role}", (env_fact,), (), (buf_fact,), None, "io-in"))
            else:
                generated.append(Rule(f"IO_{f}_{role}", (buf_fact,), (), (env_fact,), None, "io-out"))
        io_rules[role] = generated + io_rules[role]

    all_rules = env_rules + [r for role in model.roles for r in io_rules[role]]
    all_rules += [r for role in model.roles for r in role_rules[role]]
    intf = MsrModel(
        facts=facts,
        theory=model.theory,
        rules=all_rules,
        roles=dict(model.roles),
        restrictions=dict(model.restrictions),
        formats=model.formats,
        name=f"{model.name}_intf",
    )
    return InterfaceModel(intf, env_rules, io_rules, role_rules, buffers, in_facts, out_facts)


@dataclass
class SplitSystem:
    intf: InterfaceModel
    roles: dict[str, list[Rule]]  # R'_i plus role halves
    env: list[Rule]  # R_env^- plus env halves
    sync: dict[str, SyncLabel]
    facts: dict[str, FactSymbol]

    @property
    def theory(self) -> Theory:
        return self.intf.model.theory

    @property
    def restrictions(self) -> dict[str, str]:
        return self.intf.model.restrictions

    def role_model(self, role: str) -> MsrModel:
        m = self.intf.model
        return MsrModel(self.facts, m.theory, self.roles[role], {role: m.roles[role]}, m.restrictions, m.formats, f"{m.name}_{role}")

    def env_model(self) -> MsrModel:
        m = self.intf.model
        return MsrModel(self.facts, m.theory, self.env, {}, m.restrictions, m.formats, f"{m.name}_env")


def split_io(intf: InterfaceModel) -> SplitSystem:
    facts = dict(intf.model.facts)
    sync: dict[str, SyncLabel] = {}
    roles: dict[str, list[Rule]] = {}
    env = list(intf.env_rules)
    for role, ios in intf.io_rules.items():
        halves = []
        for r in ios:
            if r.origin == "setup":
                setup = r.rhs[0]
                name = sync_name(r.id, role)
                lab = Fact(name, setup.args)
                sync[name] = SyncLabel(name, setup.name, role, len(setup.args), "setup", r.id)
                env.append(Rule(f"{r.id}_env", r.lhs, (lab,), (), None, "sync-env"))
                halves.append(Rule(f"{r.id}_role", (), (lab,), r.rhs, role, "sync-in"))
            elif r.origin == "io-in":
                (src,), (buf,) = r.lhs, r.rhs
                name = sync_name(src.name, role)
                lab = Fact(name, buf.args)
                sync[name] = SyncLabel(name, src.name, role, len(buf.args), "in", r.id)
                env.append(Rule(f"{r.id}_env", r.lhs, (lab,), (), None, "sync-env"))
                halves.append(Rule(f"{r.id}_role", (), (lab,), r.rhs, role, "sync-in"))
            else:
                (buf,), (dst,) = r.lhs, r.rhs
                name = sync_name(dst.name, role)
                lab = Fact(name, buf.args)
                sync[name] = SyncLabel(name, dst.name, role, len(buf.args), "out", r.id)
                halves.append(Rule(f"{r.id}_role", r.lhs, (lab,), (), role, "sync-out"))
                env.append(Rule(f"{r.id}_env", (), (lab,), r.rhs, None, "sync-env-out"))
        roles[role] = list(intf.role_rules[role]) + halves
    for s in sync.values():
        facts[s.name] = FactSymbol(s.name, s.arity, False, "sync", s.role)
    _check_disjoint(roles, env)
    return SplitSystem(intf, roles, env, sync, facts)


def _check_disjoint(roles: dict[str, list[Rule]], env: list[Rule]) -> None:
    def syms(rules):
        return {f.name for r in rules for f in r.lhs + r.rhs}

    env_syms = syms(env)
    for role, rules in roles.items():
        shared = syms(rules) & env_syms
        if shared:
            raise AssertionError(f"role {role} shares fact symbols with the environment: {sorted(shared)}")


def rid_instances(spec: dict[str, int] | Sequence[str]) -> list[tuple[str, Fresh]]:
    """Thread ids for the composed system, e.g. ``{"Alice": 1, "Bob": 1}``."""
    if not isinstance(spec, dict):
        spec = {r: 1 for r in spec}
    return [(role, Fresh(f"rid_{role}_{i + 1}")) for role in spec for i in range(spec[role])]


def fix_rid(rules: Iterable[Rule], facts: dict[str, FactSymbol], role: str, rid: Term) -> list[Rule]:
    """Instantiate each rule's thread-id variable with ``rid``."""
    out = []
    for r in rules:
        tid = None
        for f in r.lhs + r.label + r.rhs:
            s = facts.get(f.name)
            if s is not None and s.cls in ("state", "buffer", "sync") or f.name == setup_name(role):
                tid = f.args[0]
                break
        if type(tid) is Var:
            sigma = {tid: rid}
            sub = lambda f: f.map(lambda t: substitute(t, sigma))
            r = replace(r, lhs=tuple(map(sub, r.lhs)), label=tuple(map(sub, r.label)), rhs=tuple(map(sub, r.rhs)), guard=tuple((op, substitute(a, sigma), substitute(b, sigma)) for op, a, b in r.guard))
        out.append(r)
    return out


def role_component(split: SplitSystem, role: str, rid: Term, universe: Universe, semantics: str = "eq", seeds=None) -> MsrLTS:
    """The role component for one thread id.

    Input halves have an empty premise; without ``seeds`` they are passive
    (fire only when the environment imposes their label).
    """
    rules = fix_rid(split.roles[role], split.facts, role, rid)
    passive = () if seeds is not None else [r.id for r in rules if r.origin == "sync-in"]
    return MsrLTS(rules, split.theory, universe, semantics, split.restrictions, seeds=seeds, passive=passive)


def env_component(split: SplitSystem, universe: Universe, semantics: str = "eq") -> MsrLTS:
    passive = [r.id for r in split.env if r.origin == "sync-env-out"]
    return MsrLTS(split.env, split.theory, universe, semantics, split.restrictions, passive=passive)


class ComposedLTS:
    """``(C_1 ||| ... ||| C_n) ||_Λ E`` over explicit component LTSs.

    States are tuples of component states followed by the environment state.
    A transition labeled with a synchronization label in one component must
    be matched by the same label in its partner (the environment for role
    components, the component owning the thread id for the environment);
    the joint step is unobservable.  Other steps interleave.
    """

    def __init__(self, components: Sequence[tuple[str, Term, object]], env, sync: dict[str, SyncLabel]):
        self.components = list(components)
        self.env = env
        self.sync = sync
        self.index = {(role, rid): i for i, (role, rid, _) in enumerate(self.components)}
        ltss = [c for _, _, c in self.components] + [env]
        self._sync_ids = [frozenset(r.id for r in _rules_of(c) if r.origin.startswith("sync")) for c in ltss]

    def initial(self):
        return tuple(c.initial() for _, _, c in self.components) + (self.env.initial(),)

    def _sync_fact(self, label: Multiset):
        for f in label:
            if f.name in self.sync:
                return f
        return None

    def transitions(self, state: tuple, label: Multiset | None = None) -> list[Transition]:
        out: list[Transition] = []
        seen: set = set()
        n = len(self.components)
        ltss = [c for _, _, c in self.components] + [self.env]

        def emit(lab, target, rule, sigma=()):
            key = (lab, target)
            if key not in seen:
                seen.add(key)
                out.append(Transition(lab, target, rule, sigma))

        if label is not None and self._sync_fact(label) is not None:
            return out
        # interleaved steps
        for i, lts in enumerate(ltss):
            for tr in lts.transitions(state[i], label):
                if self._sync_fact(tr.label) is None:
                    emit(tr.label, state[:i] + (tr.target,) + state[i + 1 :], tr.rule, tr.sigma)
        if label:
            return out
        # synchronized steps, started by the side whose half is active
        for i, lts in enumerate(ltss):
            for tr in lts.transitions(state[i], None, self._sync_ids[i]):
                sf = self._sync_fact(tr.label)
                if sf is None:
                    continue
                if len(tr.label) != 1:
                    raise AssertionError("synchronization labels must be alone")
                if i == n:
                    j = self.index.get((self.sync[sf.name].role, sf.args[0]))
                    if j is None:
                        continue
                else:
                    j = n
                for tr2 in ltss[j].transitions(state[j], tr.label):
                    tgt = list(state)
                    tgt[i], tgt[j] = tr.target, tr2.target
                    rule = f"{tr.rule}|{tr2.rule}" if i < j else f"{tr2.rule}|{tr.rule}"
                    emit(EMPTY, tuple(tgt), rule, tr.sigma + tr2.sigma)
        return out

    def successors(self, state):
        for tr in self.transitions(state):
            yield tr.label, tr.target


def _rules_of(lts) -> list[Rule]:
    if hasattr(lts, "rules"):
        return lts.rules
    return lts.spec.inner.rules


def compose(components: Sequence[tuple[str, Term, object]], env, sync: dict[str, SyncLabel]) -> ComposedLTS:
    return ComposedLTS(components, env, sync)


# -- canonical JSON ------------------------------------------------------------


def _rule_json(r: Rule) -> dict:
    from .iospec import fact_to_json, term_to_json

    return {
        "id": r.id,
        "role": r.role,
        "origin": r.origin,
        "lhs": [fact_to_json(f) for f in r.lhs],
        "label": [fact_to_json(f) for f in r.label],
        "rhs": [fact_to_json(f) for f in r.rhs],
        "guard": [[op, term_to_json(a), term_to_json(b)] for op, a, b in r.guard],
    }


def split_to_json(split: SplitSystem) -> str:
    """Interface model and split components as canonical JSON."""
    import json

    intf = split.intf
    m = intf.model

    def rules(rs):
        return [_rule_json(r) for r in sorted(rs, key=lambda r: r.id)]

    doc = {
        "model": m.name,
        "facts": {
            n: {"arity": s.arity, "persistent": s.persistent, "class": s.cls, "role": s.role}
            for n, s in sorted(split.facts.items())
        },
        "restrictions": dict(sorted(m.restrictions.items())),
        "interface": {
            "rules": rules(m.rules),
            "buffers": {r: dict(sorted(b.items())) for r, b in sorted(intf.buffers.items())},
            "in_facts": list(intf.in_facts),
            "out_facts": list(intf.out_facts),
        },
        "split": {
            "roles": {role: rules(rs) for role, rs in sorted(split.roles.items())},
            "env": rules(split.env),
            "sync": {
                n: {"fact": s.fact, "role": s.role, "arity": s.arity, "direction": s.direction, "rule": s.rule}
                for n, s in sorted(split.sync.items())
            },
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
