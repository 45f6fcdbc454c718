"""Parser, pretty-printer and format validator for ``.msr`` model files.

Grammar (``#`` and ``//`` start comments)::

    model     := "model" IDENT decl*
    decl      := signature | equations | facts | format | restriction | rule | role
    signature := "signature" (IDENT "/" INT KIND ["commutative"])* "end"
    equations := "equations" (term "=" term)* "end"
    facts     := "facts" (IDENT "/" INT ("linear"|"persistent") CLASS [IDENT])* "end"
    format    := "format" IDENT "(" field ("," field)* ")" "tag" HEX
    field     := IDENT ":" ("fixed" INT | "var" INT | "raw")
    restriction := "restriction" IDENT ":" ("eq"|"neq")
    role      := "role" IDENT rule* "end"
    rule      := "rule" IDENT ":" "[" facts? "]" ("-->" | "--[" facts? "]->") "[" facts? "]"
    term      := atom ("^" atom)*        (left associative)
    atom      := "~" IDENT | "$" IDENT | "~" STRING | STRING | INT | IDENT ["(" terms ")"]
               | "<" term ("," term)+ ">" | "(" term ")"

Fact classes are ``action env in out state eq``; ``state`` takes the owning
role name.  ``K``, ``Fr``, ``In``, ``Out`` and the ``Fresh`` label are
predeclared.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from .msr import FR, FRESH, IN, K, OUT, Fact, FactSymbol, MsrModel, Rule, attach_guards, show_fact
from .terms import App, Fresh, Pub, Symbol, Term, Theory, TheoryError, Var, show, variables

__all__ = [
    "ModelSyntaxError",
    "Diagnostic",
    "SourceModel",
    "parse",
    "validate",
    "load",
    "pretty",
    "ASSUMPTIONS",
]

ASSUMPTIONS = {
    "A1": "fact-signature classes are disjoint",
    "A2": "reserved fact symbols have their fixed kinds",
    "A3": "rule labels only use action or restricted facts",
    "A4": "environment rules only use environment facts",
    "A5": "Setup facts are produced only by environment rules, alone, with an empty label",
    "A6": "role rules consume only own state/input facts and produce only own state/output facts",
    "A7": "every role rule produces at least one state fact",
    "A8": "state and Setup facts share their first k arguments, the first a fresh thread id",
    "R1": "restrictions are equalities or disequalities of two arguments",
    "T1": "equations are in the supported theory class",
    "W1": "tuples are accepted but formats are recommended",
}

RESERVED = {
    K: FactSymbol(K, 1, True, "env"),
    FR: FactSymbol(FR, 1, False, "in"),
    IN: FactSymbol(IN, 1, False, "in"),
    OUT: FactSymbol(OUT, 1, False, "out"),
    FRESH: FactSymbol(FRESH, 1, False, "action"),
}
FACT_CLASSES = ("action", "env", "in", "out", "state", "eq")
SYMBOL_KINDS = ("constructor", "destructor", "format", "crypto")
PAIR = "pair"


class ModelSyntaxError(SyntaxError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{msg} (line {line}, column {col})" if line else msg)
        self.msg_text = msg
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    assumption: str
    message: str
    where: str = ""
    line: int = 0
    col: int = 0

    def to_json(self) -> dict:
        return {
            "severity": self.severity,
            "assumption": self.assumption,
            "where": self.where,
            "message": self.message,
            "span": [self.line, self.col],
        }

    def __str__(self) -> str:
        loc = f"{self.line}:{self.col}: " if self.line else ""
        return f"{loc}{self.severity} [{self.assumption}] {self.where}: {self.message}"


@dataclass
class FactDecl:
    name: str
    arity: int
    persistent: bool
    cls: str
    role: str | None = None
    line: int = 0


@dataclass
class FormatDecl:
    name: str
    fields: list[tuple[str, str, int]]  # (field name, "fixed"|"var"|"raw", width)
    tag: bytes


@dataclass
class RuleDecl:
    id: str
    role: str | None
    lhs: list[Fact]
    label: list[Fact]
    rhs: list[Fact]
    line: int = 0
    col: int = 0


@dataclass
class SourceModel:
    name: str
    symbols: list[Symbol] = field(default_factory=list)
    commutative: str | None = None
    equations: list[tuple[Term, Term, int]] = field(default_factory=list)
    facts: list[FactDecl] = field(default_factory=list)
    formats: list[FormatDecl] = field(default_factory=list)
    restrictions: list[tuple[str, str, int]] = field(default_factory=list)
    roles: list[str] = field(default_factory=list)
    rules: list[RuleDecl] = field(default_factory=list)
    uses_tuples: bool = False
    text: str = ""

    def fact_table(self) -> dict[str, FactSymbol]:
        table = dict(RESERVED)
        for d in self.facts:
            table.setdefault(d.name, FactSymbol(d.name, d.arity, d.persistent, d.cls, d.role))
            if d.name in RESERVED:
                table[d.name] = FactSymbol(d.name, d.arity, d.persistent, d.cls, d.role)
        return table

    def structure(self) -> tuple:
        """Everything except source text and positions (for round-trip checks)."""
        return (
            self.name,
            tuple(self.symbols),
            self.commutative,
            tuple((l, r) for l, r, _ in self.equations),
            tuple((d.name, d.arity, d.persistent, d.cls, d.role) for d in self.facts),
            tuple((f.name, tuple(f.fields), f.tag) for f in self.formats),
            tuple((n, op) for n, op, _ in self.restrictions),
            tuple(self.roles),
            tuple(
                (r.id, r.role, tuple(r.lhs), tuple(r.label), tuple(r.rhs)) for r in self.rules
            ),
        )


# -- lexer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+) |
    (?P<comment>(\#|//)[^\n]*) |
    (?P<larrow>--\[) |
    (?P<rarrow>\]->) |
    (?P<arrow>-->) |
    (?P<hex>0x[0-9a-fA-F]*) |
    (?P<int>[0-9]+) |
    (?P<string>'[^'\n]*') |
    (?P<ident>[A-Za-z_][A-Za-z0-9_]*) |
    (?P<punct>[()\[\]<>,:/^=~$!])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    out = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            out.append(Token(kind, tok, line, pos - line_start + 1))
        nl = tok.count("\n")
        if nl:
            line += nl
            line_start = pos + tok.rindex("\n") + 1
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


# -- parser ----------------------------------------------------------------

_SECTION_KEYWORDS = {"signature", "equations", "facts", "format", "restriction", "rule", "role", "end"}


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.src = SourceModel(name="", text=text)
        self.raw_rules: list[tuple] = []

    # token helpers
    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.cur
        raise ModelSyntaxError(msg, tok.line, tok.col)

    def take(self) -> Token:
        t = self.cur
        self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.cur.text == text and self.cur.kind != "string"

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}, found {self.cur.text or 'end of input'!r}")
        return self.take()

    def ident(self, what: str = "identifier") -> Token:
        if self.cur.kind != "ident":
            self.error(f"expected {what}, found {self.cur.text or 'end of input'!r}")
        return self.take()

    def integer(self) -> int:
        if self.cur.kind != "int":
            self.error(f"expected integer, found {self.cur.text!r}")
        return int(self.take().text)

    # grammar
    def parse(self) -> SourceModel:
        if not self.at("model"):
            self.error("expected model header")
        self.take()
        self.src.name = self.ident("model name").text
        while self.cur.kind != "eof":
            kw = self.cur.text
            if kw == "signature":
                self.signature()
            elif kw == "equations":
                self.equations_raw()
            elif kw == "facts":
                self.facts()
            elif kw == "format":
                self.format()
            elif kw == "restriction":
                self.restriction()
            elif kw == "rule":
                self.rule(None)
            elif kw == "role":
                self.role()
            else:
                self.error(f"unexpected {kw!r} at top level")
        self.resolve()
        return self.src

    def signature(self):
        self.take()
        while not self.at("end"):
            name = self.ident("function symbol").text
            self.expect("/")
            arity = self.integer()
            kind = self.ident("symbol kind")
            if kind.text not in SYMBOL_KINDS:
                self.error(f"unknown symbol kind {kind.text!r}", kind)
            self.src.symbols.append(Symbol(name, arity, kind.text))
            if self.at("commutative"):
                self.take()
                self.src.commutative = name
        self.take()

    def equations_raw(self):
        # terms need the complete signature, so equations are re-parsed in resolve()
        self.take()
        start = self.i
        while not self.at("end"):
            if self.cur.kind == "eof":
                self.error("unterminated equations section")
            self.take()
        self._eq_tokens = getattr(self, "_eq_tokens", []) + [(start, self.i)]
        self.take()

    def facts(self):
        self.take()
        while not self.at("end"):
            name = self.ident("fact symbol")
            self.expect("/")
            arity = self.integer()
            kind = self.ident("linear or persistent")
            if kind.text not in ("linear", "persistent"):
                self.error("expected linear or persistent", kind)
            cls = self.ident("fact class")
            if cls.text not in FACT_CLASSES:
                self.error(f"unknown fact class {cls.text!r}", cls)
            role = None
            if cls.text == "state":
                role = self.ident("role name").text
            self.src.facts.append(
                FactDecl(name.text, arity, kind.text == "persistent", cls.text, role, name.line)
            )
        self.take()

    def format(self):
        self.take()
        name = self.ident("format name").text
        self.expect("(")
        fields = []
        while True:
            fname = self.ident("field name").text
            self.expect(":")
            kind = self.ident("field kind")
            m = re.fullmatch(r"(fixed|var)([0-9]*)", kind.text)
            if m:
                width = int(m.group(2)) if m.group(2) else self.integer()
                if width < 1:
                    self.error("field width must be positive", kind)
                fields.append((fname, m.group(1), width))
            elif kind.text == "raw":
                fields.append((fname, "raw", 0))
            else:
                self.error(f"unknown field kind {kind.text!r}", kind)
            if self.at(")"):
                break
            self.expect(",")
        self.take()
        self.expect("tag")
        if self.cur.kind != "hex" or len(self.cur.text) % 2:
            self.error("expected hex tag such as 0x01")
        tag = bytes.fromhex(self.take().text[2:])
        self.src.formats.append(FormatDecl(name, fields, tag))
        self.src.symbols.append(Symbol(name, len(fields), "format"))

    def restriction(self):
        tok = self.take()
        name = self.ident("fact symbol").text
        self.expect(":")
        op = self.ident("eq or neq").text
        self.src.restrictions.append((name, op, tok.line))

    def role(self):
        self.take()
        name = self.ident("role name").text
        if name not in self.src.roles:
            self.src.roles.append(name)
        while not self.at("end"):
            if not self.at("rule"):
                self.error(f"expected rule or end in role {name}")
            self.rule(name)
        self.take()

    def rule(self, role):
        tok = self.take()
        rid = self.ident("rule name").text
        self.expect(":")
        start = self.i
        depth = 0
        while True:
            t = self.cur
            if t.kind == "eof":
                self.error(f"unterminated rule {rid}", tok)
            if t.kind in ("larrow",) or t.text == "[":
                depth += 1
            elif t.kind == "rarrow" or t.text == "]":
                depth -= 1
            self.take()
            if depth == 0 and self.i > start and self.toks[self.i - 1].text == "]" and self._rule_done(start):
                break
        self.raw_rules.append((rid, role, start, self.i, tok))

    def _rule_done(self, start: int) -> bool:
        kinds = [t for t in self.toks[start : self.i]]
        arrows = sum(1 for t in kinds if t.kind in ("arrow", "rarrow"))
        return arrows == 1

    # resolution of terms and facts against declarations
    def resolve(self):
        src = self.src
        self.symtab = {s.name: s for s in src.symbols}
        self.facttab = src.fact_table()
        for start, end in getattr(self, "_eq_tokens", []):
            self.i = start
            while self.i < end:
                line = self.cur.line
                lhs = self.term()
                self.expect("=")
                rhs = self.term()
                src.equations.append((lhs, rhs, line))
        for rid, role, start, end, tok in self.raw_rules:
            self.i = start
            lhs = self.fact_list("[", "]")
            if self.cur.kind == "arrow":
                self.take()
                label = []
            elif self.cur.kind == "larrow":
                self.take()
                label = self.fact_list(None, "]->")
            else:
                self.error("expected --> or --[")
            rhs = self.fact_list("[", "]")
            if self.i != end:
                self.error("trailing tokens after rule")
            src.rules.append(RuleDecl(rid, role, lhs, label, rhs, tok.line, tok.col))
        if PAIR in self._used and PAIR not in self.symtab:
            sym = Symbol(PAIR, 2, "constructor")
            src.symbols.append(sym)
            self.symtab[PAIR] = sym

    _used: set = set()

    def fact_list(self, open_, close) -> list[Fact]:
        if open_:
            self.expect(open_)
        out = []
        closing = (lambda: self.cur.kind == "rarrow") if close == "]->" else (lambda: self.at(close))
        while not closing():
            out.append(self.fact())
            if closing():
                break
            self.expect(",")
        self.take()
        return out

    def fact(self) -> Fact:
        bang = False
        if self.at("!"):
            self.take()
            bang = True
        tok = self.ident("fact")
        decl = self.facttab.get(tok.text)
        if decl is None:
            self.error(f"undeclared fact symbol {tok.text}", tok)
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.term())
            while self.at(","):
                self.take()
                args.append(self.term())
        self.expect(")")
        if len(args) != decl.arity:
            self.error(f"fact {tok.text} expects {decl.arity} arguments, got {len(args)}", tok)
        if bang and not decl.persistent:
            self.error(f"fact {tok.text} is linear but marked persistent", tok)
        return Fact(tok.text, args, decl.persistent)

    def term(self) -> Term:
        t = self.atom()
        while self.at("^"):
            tok = self.take()
            if self.src.commutative is None:
                self.error("'^' used without a commutative exponent symbol", tok)
            t = App(self.src.commutative, (t, self.atom()))
        return t

    def atom(self) -> Term:
        tok = self.cur
        if self.at("~"):
            self.take()
            if self.cur.kind == "string":
                return Fresh(self.take().text[1:-1])
            return Var(self.ident("variable").text, "fresh")
        if self.at("$"):
            self.take()
            return Var(self.ident("variable").text, "pub")
        if tok.kind == "string":
            self.take()
            return Pub(tok.text[1:-1])
        if tok.kind == "int":
            self.take()
            return Pub(tok.text)
        if self.at("("):
            self.take()
            t = self.term()
            self.expect(")")
            return t
        if self.at("<"):
            self.take()
            items = [self.term()]
            while self.at(","):
                self.take()
                items.append(self.term())
            self.expect(">")
            if len(items) < 2:
                self.error("tuples need at least two components", tok)
            self.src.uses_tuples = True
            self._used = self._used | {PAIR}
            t = items[-1]
            for x in reversed(items[:-1]):
                t = App(PAIR, (x, t))
            return t
        if tok.kind == "ident":
            self.take()
            sym = self.symtab.get(tok.text)
            if self.at("("):
                if sym is None:
                    self.error(f"undeclared function symbol {tok.text}", tok)
                self.take()
                args = []
                if not self.at(")"):
                    args.append(self.term())
                    while self.at(","):
                        self.take()
                        args.append(self.term())
                self.expect(")")
                if len(args) != sym.arity:
                    self.error(f"{tok.text} expects {sym.arity} arguments, got {len(args)}", tok)
                return App(tok.text, args)
            if sym is not None and sym.arity == 0:
                return App(tok.text)
            if sym is not None:
                self.error(f"{tok.text} expects {sym.arity} arguments", tok)
            return Var(tok.text, "msg")
        self.error(f"expected term, found {tok.text or 'end of input'!r}")


def parse(text: str) -> SourceModel:
    """Parse model text; raises ModelSyntaxError at the first syntax error."""
    return _Parser(text).parse()


# -- validation ------------------------------------------------------------


def _setup_name(role: str) -> str:
    return f"Setup_{role}"


def validate(src: SourceModel) -> MsrModel | list[Diagnostic]:
    """Check the format assumptions; return a model or the error diagnostics.

    Warnings (tuples) do not block; they are attached to the returned model
    as ``model.warnings``.
    """
    diags: list[Diagnostic] = []

    def err(aid, where, msg, line=0, col=0):
        diags.append(Diagnostic("error", aid, msg, where, line, col))

    # A1: each fact symbol belongs to exactly one class
    seen: dict[str, FactDecl] = {}
    for d in src.facts:
        prev = seen.get(d.name)
        if prev is not None and (prev.cls, prev.role, prev.arity, prev.persistent) != (
            d.cls,
            d.role,
            d.arity,
            d.persistent,
        ):
            err("A1", d.name, f"declared both as {prev.cls} and as {d.cls}", d.line)
        seen.setdefault(d.name, d)
    for d in src.facts:
        if d.cls == "state" and d.role not in src.roles:
            err("A1", d.name, f"state fact of unknown role {d.role}", d.line)

    # A2: reserved symbols and Setup facts
    for d in src.facts:
        res = RESERVED.get(d.name)
        if res is not None and (res.persistent, res.cls, res.arity) != (d.persistent, d.cls, d.arity):
            kind = "persistent" if res.persistent else "linear"
            err("A2", d.name, f"reserved fact must be {kind} {res.cls}/{res.arity}", d.line)
    table = src.fact_table()
    k: dict[str, int] = {}
    for role in src.roles:
        s = table.get(_setup_name(role))
        if s is None:
            err("A2", role, f"missing initialization fact {_setup_name(role)}")
        elif s.cls != "in" or s.persistent or s.arity < 1:
            err("A2", s.name, "Setup facts must be linear input facts with at least one argument")
        else:
            k[role] = s.arity

    # R1: restriction shapes
    restrictions: dict[str, str] = {}
    for name, op, line in src.restrictions:
        s = table.get(name)
        if op not in ("eq", "neq") or s is None or s.arity != 2 or s.cls != "eq":
            err("R1", name, "only eq/neq restrictions over a binary eq-class fact are supported", line)
        else:
            restrictions[name] = op
    for name, s in table.items():
        if s.cls == "eq" and name not in restrictions:
            err("R1", name, "eq-class fact without restriction")

    theory = Theory()
    for sym in src.symbols:
        try:
            theory.add_symbol(sym)
        except TheoryError as e:
            err("T1", sym.name, str(e))
    if src.commutative:
        theory.declare_commutative(src.commutative)
    for lhs, rhs, line in src.equations:
        try:
            theory.add_equation(lhs, rhs)
        except TheoryError as e:
            err("T1", f"{show(lhs)} = {show(rhs)}", str(e), line)

    env_classes = {"env", "in", "out"}
    for r in src.rules:
        where = f"rule {r.id}"
        cls = lambda f: table[f.name].cls
        for f in r.label:
            if cls(f) not in ("action", "eq"):
                err("A3", where, f"label fact {f.name} is not an action", r.line, r.col)
        if r.role is None:
            for f in r.lhs + r.rhs:
                if cls(f) not in env_classes:
                    err("A4", where, f"environment rule uses {cls(f)} fact {f.name}", r.line, r.col)
            setups = [f for f in r.rhs if f.name.startswith("Setup_") and cls(f) == "in"]
            if setups and (len(r.rhs) != 1 or r.label):
                err("A5", where, "a Setup-producing rule must produce only that fact with an empty label", r.line, r.col)
            continue
        role = r.role
        setup = _setup_name(role)
        for f in r.rhs:
            if f.name.startswith("Setup_") and cls(f) == "in":
                err("A5", where, f"role rule produces {f.name}", r.line, r.col)
        for f in r.lhs:
            c = table[f.name]
            if not ((c.cls == "state" and c.role == role) or c.cls == "in"):
                err("A6", where, f"consumes {f.name}, not a state fact of {role} or an input", r.line, r.col)
            elif c.cls == "in" and f.name.startswith("Setup_") and f.name != setup:
                err("A6", where, f"consumes another role's {f.name}", r.line, r.col)
        for f in r.rhs:
            c = table[f.name]
            if not ((c.cls == "state" and c.role == role) or c.cls == "out" or f.name.startswith("Setup_")):
                err("A6", where, f"produces {f.name}, not a state fact of {role} or an output", r.line, r.col)
        if not any(table[f.name].cls == "state" and table[f.name].role == role for f in r.rhs):
            err("A7", where, "produces no state fact", r.line, r.col)
        ki = k.get(role)
        if ki is not None:
            carriers = [
                f
                for f in r.lhs + r.rhs
                if f.name == setup or (table[f.name].cls == "state" and table[f.name].role == role)
            ]
            short = [f for f in carriers if len(f.args) < ki]
            if short:
                err("A8", where, f"{short[0].name} has fewer than k={ki} arguments", r.line, r.col)
            elif carriers:
                prefixes = {tuple(f.args[:ki]) for f in carriers}
                if len(prefixes) > 1:
                    err("A8", where, f"state facts disagree on the first {ki} parameters", r.line, r.col)
                rid = carriers[0].args[0]
                if not (type(rid) is Fresh or (type(rid) is Var and rid.sort == "fresh")):
                    err("A8", where, f"thread id {show(rid)} is not fresh-sorted", r.line, r.col)

    if diags:
        return diags

    from .transform import gen_env_rules

    facts = {n: FactSymbol(s.name, s.arity, s.persistent, s.cls, s.role) for n, s in table.items()}
    rules = [Rule(r.id, tuple(r.lhs), tuple(r.label), tuple(r.rhs), r.role) for r in src.rules]
    rules = gen_env_rules(theory) + rules
    model = MsrModel(
        facts=facts,
        theory=theory,
        rules=attach_guards(rules, restrictions),
        roles={role: k[role] for role in src.roles},
        restrictions=restrictions,
        formats={f.name: f for f in src.formats},
        name=src.name,
    )
    model.warnings = []
    if src.uses_tuples:
        model.warnings.append(
            Diagnostic("warning", "W1", "tuples used in rule bodies; consider declaring formats", src.name)
        )
    model.source = src
    return model


def load(text: str) -> MsrModel:
    """Parse and validate, raising ValueError carrying diagnostics on failure."""
    res = validate(parse(text))
    if isinstance(res, list):
        raise InvalidModel(res)
    return res


class InvalidModel(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


# -- pretty printer --------------------------------------------------------


def _show(t: Term, src: SourceModel) -> str:
    return show(t, exp=src.commutative or "\0", pair=PAIR)


def _fact(f: Fact, src: SourceModel) -> str:
    return ("!" if f.persistent else "") + f"{f.name}(" + ", ".join(_show(a, src) for a in f.args) + ")"


def pretty(src: SourceModel) -> str:
    """Render a parsed model back into model-file syntax."""
    fmt_names = {f.name for f in src.formats}
    lines = [f"model {src.name}", ""]
    sig = [s for s in src.symbols if s.name not in fmt_names and not (s.name == PAIR and src.uses_tuples)]
    if sig:
        lines.append("signature")
        for s in sig:
            flag = " commutative" if s.name == src.commutative else ""
            lines.append(f"  {s.name}/{s.arity} {s.kind}{flag}")
        lines.append("end")
    for f in src.formats:
        fields = ", ".join(
            f"{n}: raw" if kind == "raw" else f"{n}: {kind}{w}" for n, kind, w in f.fields
        )
        lines.append(f"format {f.name}({fields}) tag 0x{f.tag.hex()}")
    if src.equations:
        lines.append("equations")
        for l, r, _ in src.equations:
            lines.append(f"  {_show(l, src)} = {_show(r, src)}")
        lines.append("end")
    if src.facts:
        lines.append("facts")
        for d in src.facts:
            kind = "persistent" if d.persistent else "linear"
            role = f" {d.role}" if d.role else ""
            lines.append(f"  {d.name}/{d.arity} {kind} {d.cls}{role}")
        lines.append("end")
    for name, op, _ in src.restrictions:
        lines.append(f"restriction {name} : {op}")
    lines.append("")

    def rule_line(r: RuleDecl, indent: str) -> str:
        lhs = ", ".join(_fact(f, src) for f in r.lhs)
        rhs = ", ".join(_fact(f, src) for f in r.rhs)
        arrow = "-->" if not r.label else "--[" + ", ".join(_fact(f, src) for f in r.label) + "]->"
        return f"{indent}rule {r.id}: [{lhs}] {arrow} [{rhs}]"

    for r in src.rules:
        if r.role is None:
            lines.append(rule_line(r, ""))
    for role in src.roles:
        lines.append("")
        lines.append(f"role {role}")
        for r in src.rules:
            if r.role == role:
                lines.append(rule_line(r, "  "))
        lines.append("end")
    return "\n".join(lines) + "\n"
