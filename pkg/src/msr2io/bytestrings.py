"""Bytestring algebra, message formats and the pattern-requirement checks.

The reference algebra encodes

* fresh names as 8-byte ids (a marker byte followed by a hash prefix),
* public names as their literal ASCII bytes,
* declared formats by their layouts: tag, then each field either fixed
  width, length prefixed (big-endian prefix of the declared width) or raw,
* every other symbol as a tagged, length-delimited construction, which is
  injective by design.

The commutative exponent keeps its exponents sorted on the byte level and
destructors evaluate their equations on bytes, so equal terms modulo the
theory have equal encodings.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .terms import App, Fresh, Pub, Term, Theory, Var, depth, enumerate_ground, show, substitute, variables

__all__ = [
    "EncodingError",
    "UnmappedSymbol",
    "NO_MATCH",
    "Field",
    "FormatSpec",
    "NamePolicy",
    "Algebra",
    "Obligation",
    "gamma",
    "parse_format",
    "check_image_disjointness",
    "check_pattern_injectivity",
    "split_nonlinear",
    "match_sequential",
    "role_patterns",
    "emit_pattern_obligations",
    "collision_search",
]

CONS = 0xF0  # leading byte of tagged constructions
FRESH_MARK = 0xFE
FRESH_LEN = 8
LEN = 4  # width of argument lengths inside constructions


class EncodingError(ValueError):
    """A value does not fit a format field."""


class UnmappedSymbol(KeyError):
    """The algebra has no byte-level function for a symbol."""


NO_MATCH = None


@dataclass(frozen=True)
class Field:
    name: str
    kind: str  # "fixed", "var" (length prefixed) or "raw"
    width: int = 0  # byte width, or prefix width for "var"

    def __post_init__(self):
        if self.kind not in ("fixed", "var", "raw"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind != "raw" and self.width < 1:
            raise ValueError("field width must be positive")


@dataclass(frozen=True)
class FormatSpec:
    symbol: str
    tag: bytes
    fields: tuple[Field, ...]

    def __post_init__(self):
        if not self.tag:
            raise ValueError("format tag must be nonempty")

    @classmethod
    def from_decl(cls, decl) -> "FormatSpec":
        return cls(decl.name, decl.tag, tuple(Field(n, k, w) for n, k, w in decl.fields))

    @property
    def min_len(self) -> int:
        return len(self.tag) + sum(f.width for f in self.fields if f.kind != "raw")

    @property
    def max_len(self) -> int | None:
        if any(f.kind == "raw" for f in self.fields):
            return None
        return len(self.tag) + sum(f.width + (256**f.width - 1 if f.kind == "var" else 0) for f in self.fields)

    @property
    def unambiguous(self) -> bool:
        """Every field sits at a fixed offset or behind its own length prefix."""
        raw = [i for i, f in enumerate(self.fields) if f.kind == "raw"]
        if len(raw) > 1:
            return False
        return not raw or all(f.kind == "fixed" for f in self.fields[raw[0] + 1 :])

    def encode(self, values: Sequence[bytes]) -> bytes:
        if len(values) != len(self.fields):
            raise EncodingError(f"{self.symbol} takes {len(self.fields)} fields, got {len(values)}")
        out = bytearray(self.tag)
        for f, v in zip(self.fields, values):
            if f.kind == "fixed":
                if len(v) != f.width:
                    raise EncodingError(f"field {f.name} of {self.symbol} needs {f.width} bytes, got {len(v)}")
            elif f.kind == "var":
                if len(v) >= 256**f.width:
                    raise EncodingError(f"field {f.name} of {self.symbol} is too long")
                out += len(v).to_bytes(f.width, "big")
            out += v
        return bytes(out)

    def splits(self, b: bytes) -> list[tuple[bytes, ...]]:
        """Every way of reading ``b`` as this format."""
        if not b.startswith(self.tag):
            return []
        out: list[tuple[bytes, ...]] = []
        self._split(b, len(self.tag), 0, (), out)
        return out

    def _split(self, b: bytes, pos: int, i: int, acc: tuple, out: list) -> None:
        if i == len(self.fields):
            if pos == len(b):
                out.append(acc)
            return
        f = self.fields[i]
        if f.kind == "fixed":
            if pos + f.width <= len(b):
                self._split(b, pos + f.width, i + 1, acc + (b[pos : pos + f.width],), out)
        elif f.kind == "var":
            if pos + f.width <= len(b):
                n = int.from_bytes(b[pos : pos + f.width], "big")
                end = pos + f.width + n
                if end <= len(b):
                    self._split(b, end, i + 1, acc + (b[pos + f.width : end],), out)
        else:
            rest = len(b) - pos - sum(g.width for g in self.fields[i + 1 :] if g.kind != "raw")
            for end in range(pos, pos + max(rest, -1) + 1):
                self._split(b, end, i + 1, acc + (b[pos:end],), out)


def parse_format(spec: FormatSpec, b: bytes):
    """Fields of ``b`` read as ``spec`` (the first reading if several), or ``NO_MATCH``."""
    s = spec.splits(b)
    return list(s[0]) if s else NO_MATCH


@dataclass(frozen=True)
class NamePolicy:
    """What name encodings look like, as seen by the disjointness checker."""

    fresh_len: int = FRESH_LEN
    fresh_first: frozenset = frozenset({FRESH_MARK})
    pub_first: frozenset = frozenset(range(0x21, 0x7F))
    pub_max_len: int | None = None

    def excluded_by(self, fmt: FormatSpec) -> bool:
        fresh_ok = fmt.min_len > self.fresh_len or fmt.tag[0] not in self.fresh_first
        pub_ok = (self.pub_max_len is not None and fmt.min_len > self.pub_max_len) or fmt.tag[0] not in self.pub_first
        return fresh_ok and pub_ok


def fresh_bytes(name: str) -> bytes:
    return bytes([FRESH_MARK]) + hashlib.blake2b(name.encode(), digest_size=FRESH_LEN - 1).digest()


def _is_pub_bytes(b: bytes) -> bool:
    return bool(b) and all(0x21 <= c < 0x7F for c in b)


class Algebra:
    """The reference bytestring algebra for a theory and its formats."""

    def __init__(self, theory: Theory, formats: Iterable[FormatSpec] = ()):
        self.theory = theory
        self.formats = {f.symbol: f for f in formats}
        self.symbols = sorted(theory.symbols)
        self._code = {s: i for i, s in enumerate(self.symbols)}
        self._fresh: dict[bytes, str] = {}
        self._gamma: dict[Term, bytes] = {}

    @classmethod
    def of_model(cls, model) -> "Algebra":
        return cls(model.theory, (FormatSpec.from_decl(d) for d in model.formats.values()))

    # -- names and constructions ---------------------------------------

    def name(self, t: Term) -> bytes:
        if type(t) is Fresh:
            b = fresh_bytes(t.name)
            self._fresh[b] = t.name
            return b
        b = t.name.encode()
        if not _is_pub_bytes(b):
            raise EncodingError(f"public name {t.name!r} is not printable ASCII")
        return b

    def construct(self, sym: str, args: Sequence[bytes]) -> bytes:
        out = bytearray((CONS, self._code[sym], len(args)))
        for a in args:
            out += len(a).to_bytes(LEN, "big") + a
        return bytes(out)

    def deconstruct(self, b: bytes):
        """(symbol, argument bytes) of a tagged construction, else None."""
        if len(b) < 3 or b[0] != CONS or b[1] >= len(self.symbols):
            return None
        pos, args = 3, []
        for _ in range(b[2]):
            if pos + LEN > len(b):
                return None
            n = int.from_bytes(b[pos : pos + LEN], "big")
            pos += LEN
            if pos + n > len(b):
                return None
            args.append(b[pos : pos + n])
            pos += n
        if pos != len(b):
            return None
        return self.symbols[b[1]], args

    # -- the byte-level functions --------------------------------------

    def apply(self, sym: str, args: Sequence[bytes]) -> bytes:
        s = self.theory.symbols.get(sym)
        if s is None:
            raise UnmappedSymbol(sym)
        if len(args) != s.arity:
            raise EncodingError(f"{sym} takes {s.arity} arguments, got {len(args)}")
        fmt = self.formats.get(sym)
        if fmt is not None:
            return fmt.encode(args)
        if sym == self.theory.exp:
            base, exps = args[0], [args[1]]
            d = self.deconstruct(base)
            if d is not None and d[0] == sym:
                base, exps = d[1][0], d[1][1:] + exps
            return self.construct(sym, [base] + sorted(exps))
        for eq in self.theory._by_root.get(sym, ()):
            for binding in self._match_args(eq.lhs.args, args, {}):
                return self._eval(eq.rhs, binding)
        return self.construct(sym, args)

    def _eval(self, t: Term, binding: dict) -> bytes:
        if type(t) is Var:
            return binding[t]
        if type(t) is App:
            return self.apply(t.fn, [self._eval(a, binding) for a in t.args])
        return self.name(t)

    def _match_args(self, pats, bs, binding):
        if not pats:
            yield binding
            return
        for b2 in self._match(pats[0], bs[0], binding):
            yield from self._match_args(pats[1:], bs[1:], b2)

    def _match(self, p: Term, b: bytes, binding: dict):
        if type(p) is Var:
            old = binding.get(p)
            if old is None:
                yield {**binding, p: b}
            elif old == b:
                yield binding
            return
        if type(p) is not App:
            if self.name(p) == b:
                yield binding
            return
        fmt = self.formats.get(p.fn)
        if fmt is not None:
            for parts in fmt.splits(b):
                yield from self._match_args(p.args, list(parts), binding)
            return
        d = self.deconstruct(b)
        if d is not None and d[0] == p.fn and len(d[1]) == len(p.args):
            yield from self._match_args(p.args, d[1], binding)

    # -- inverse ---------------------------------------------------------

    def parse_terms(self, b: bytes, max_depth: int = 4, memo: dict | None = None) -> set[Term]:
        """Normal-form terms of depth <= ``max_depth`` whose encoding is ``b``."""
        memo = {} if memo is None else memo
        return {t for t in self._parse(b, max_depth, memo) if self.gamma(t) == b}

    def _parse(self, b: bytes, d: int, memo: dict) -> set[Term]:
        key = (b, d)
        if key in memo:
            return memo[key]
        memo[key] = set()
        out: set[Term] = set()
        if b in self._fresh:
            out.add(Fresh(self._fresh[b]))
        elif len(b) == FRESH_LEN and b[0] == FRESH_MARK:
            out.add(Fresh("id" + b[1:].hex()))
        if _is_pub_bytes(b):
            out.add(Pub(b.decode()))
        c = self.deconstruct(b)
        if c is not None and not c[1] and self.theory.symbols[c[0]].arity == 0:
            out.add(App(c[0]))  # constants are atoms
        if d > 0:
            c = self.deconstruct(b)
            if c is not None:
                sym, args = c
                if sym == self.theory.exp and len(args) >= 2:
                    out |= self._parse_chain(sym, args, d, memo)
                elif self.theory.symbols[sym].arity == len(args):
                    for combo in itertools.product(*(self._parse(a, d - 1, memo) for a in args)):
                        out.add(self.theory.normalize(App(sym, combo)))
            for fmt in self.formats.values():
                for parts in fmt.splits(b):
                    for combo in itertools.product(*(self._parse(a, d - 1, memo) for a in parts)):
                        out.add(self.theory.normalize(App(fmt.symbol, combo)))
        memo[key] = out
        return out

    def _parse_chain(self, sym: str, args, d: int, memo: dict) -> set[Term]:
        n = len(args) - 1
        if n > d:
            return set()
        out = set()
        for combo in itertools.product(*(self._parse(a, d - 1, memo) for a in args)):
            t = combo[0]
            for e in combo[1:]:
                t = App(sym, (t, e))
            t = self.theory.normalize(t)
            if depth(t) <= d:
                out.add(t)
        return out

    def gamma(self, t: Term) -> bytes:
        b = self._gamma.get(t)
        if b is None:
            if type(t) is App:
                b = self.apply(t.fn, [self.gamma(a) for a in t.args])
            elif type(t) is Var:
                raise EncodingError(f"cannot encode variable {show(t)}")
            else:
                b = self.name(t)
            if len(self._gamma) > 1 << 16:
                self._gamma.clear()
            self._gamma[t] = b
        return b


def gamma(t: Term, alg: Algebra) -> bytes:
    """Encoding of a ground term: names by their bytes, applications by the
    byte-level function of their symbol."""
    return alg.gamma(t)


# -- obligations ---------------------------------------------------------

ASSUMED_CRYPTO = "assumed-crypto"
PROVED = "proved-format"
FAILED = "failed"
ASSUMED = "assumed"
PROVED_WITH_CRYPTO = "proved-with-crypto-assumptions"


@dataclass(frozen=True)
class Obligation:
    kind: str  # PatternRequirement, ImageDisjointness, PatternInjectivity, CollisionFreedom
    subject: tuple[str, ...]
    status: str
    pattern: str | None = None
    role: str | None = None
    detail: str = ""
    params: tuple[str, ...] = field(default=(), compare=False)
    term: Term | None = field(default=None, compare=False, repr=False)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "subject": list(self.subject),
            "status": self.status,
            "pattern": self.pattern,
            "role": self.role,
            "detail": self.detail,
        }


def _is_format(alg: Algebra, sym: str) -> bool:
    return sym in alg.formats


def check_image_disjointness(alg: Algebra, formats=None, policy: NamePolicy | None = None) -> list[Obligation]:
    """Disjointness of the images of all symbols from each other and from names.

    Pairs involving a non-format symbol are assumed; format pairs are proved
    from their tags and length ranges, or fail.
    """
    policy = policy or NamePolicy()
    fmts = alg.formats if formats is None else {f.symbol: f for f in formats}
    syms = sorted(set(alg.symbols) | set(fmts))
    out = [Obligation("ImageDisjointness", ("names", "names"), ASSUMED_CRYPTO, detail="names encode injectively")]
    for f in syms:
        if f in fmts:
            ok = policy.excluded_by(fmts[f])
            out.append(
                Obligation(
                    "ImageDisjointness",
                    (f, "names"),
                    PROVED if ok else FAILED,
                    detail="tag or length excludes names" if ok else "a name encoding may read as this format",
                )
            )
        else:
            out.append(Obligation("ImageDisjointness", (f, "names"), ASSUMED_CRYPTO))
    for f, g in itertools.combinations(syms, 2):
        if f in fmts and g in fmts:
            ok, why = _formats_disjoint(fmts[f], fmts[g])
            out.append(Obligation("ImageDisjointness", (f, g), PROVED if ok else FAILED, detail=why))
        else:
            out.append(Obligation("ImageDisjointness", (f, g), ASSUMED_CRYPTO))
    return out


def _formats_disjoint(a: FormatSpec, b: FormatSpec) -> tuple[bool, str]:
    n = min(len(a.tag), len(b.tag))
    if a.tag[:n] != b.tag[:n]:
        return True, "tags differ"
    amax = a.max_len if a.max_len is not None else float("inf")
    bmax = b.max_len if b.max_len is not None else float("inf")
    if amax < b.min_len or bmax < a.min_len:
        return True, "length ranges are disjoint"
    return False, "same tag prefix and overlapping lengths"


def _symbols_in(t: Term) -> list[str]:
    out: list[str] = []
    stack = [t]
    while stack:
        s = stack.pop()
        if type(s) is App:
            if s.fn not in out:
                out.append(s.fn)
            stack.extend(reversed(s.args))
    return out


def check_pattern_injectivity(t: Term, alg: Algebra, formats=None) -> list[Obligation]:
    """One injectivity obligation per symbol applied in ``t``."""
    fmts = alg.formats if formats is None else {f.symbol: f for f in formats}
    out = []
    for sym in _symbols_in(t):
        fmt = fmts.get(sym)
        if fmt is None:
            out.append(Obligation("PatternInjectivity", (sym,), ASSUMED_CRYPTO, show(t)))
        elif fmt.unambiguous:
            out.append(Obligation("PatternInjectivity", (sym,), PROVED, show(t), detail="fields at fixed offsets or length prefixed"))
        else:
            out.append(Obligation("PatternInjectivity", (sym,), FAILED, show(t), detail="adjacent unprefixed fields"))
    return out


# -- non-linear patterns ----------------------------------------------------


def _positions(t: Term, pos=()):
    yield pos, t
    if type(t) is App:
        for i, a in enumerate(t.args):
            yield from _positions(a, pos + (i,))


def _replace(t: Term, pos: tuple, new: Term) -> Term:
    if not pos:
        return new
    args = list(t.args)
    args[pos[0]] = _replace(args[pos[0]], pos[1:], new)
    return App(t.fn, tuple(args))


def split_nonlinear(t: Term, bound: Iterable[Var] = ()) -> list[Term]:
    """Linear patterns whose sequential matching is equivalent to matching ``t``.

    Variables in ``bound`` are fixed by the context and do not count.  The
    i-th output keeps the i-th occurrence of every repeated variable; each
    other occurrence is blanked out together with the largest enclosing
    subterm that holds no kept occurrence.  Blanks are fresh variables
    named ``_1``, ``_2``...
    """
    bound = set(bound)
    occ: dict[Var, list[tuple]] = {}
    for pos, s in _positions(t):
        if type(s) is Var and s not in bound:
            occ.setdefault(s, []).append(pos)
    repeated = {v: ps for v, ps in occ.items() if len(ps) > 1}
    if not repeated:
        return [t]
    n = max(len(ps) for ps in repeated.values())
    outs = [_blank(t, repeated, i, coarse=True) for i in range(n)]
    if not _covers(t, outs):
        outs = [_blank(t, repeated, i, coarse=False) for i in range(n)]
    return outs


def _blank(t: Term, repeated: dict, i: int, coarse: bool) -> Term:
    kept = [ps[min(i, len(ps) - 1)] for ps in repeated.values()]
    drop = [p for ps in repeated.values() for p in ps if p not in kept]
    targets = set()
    for d in drop:
        cut = d
        if coarse:
            for k in range(1, len(d) + 1):
                prefix = d[:k]
                if not any(kp[: len(prefix)] == prefix for kp in kept):
                    cut = prefix
                    break
        targets.add(cut)
    # outermost cuts only
    cuts = sorted(c for c in targets if not any(o != c and c[: len(o)] == o for o in targets))
    out = t
    for j, c in enumerate(cuts, 1):
        out = _replace(out, c, Var(f"_{j}"))
    return out


def _covers(t: Term, outs: list[Term]) -> bool:
    """Every position of ``t`` survives, unblanked, in some output."""
    for pos, s in _positions(t):
        if not any(_at(o, pos) == s or (type(s) is not Var and _defined(o, pos)) for o in outs):
            return False
    return True


def _at(t: Term, pos: tuple):
    for i in pos:
        if type(t) is not App or i >= len(t.args):
            return None
        t = t.args[i]
    return t


def _defined(t: Term, pos: tuple) -> bool:
    s = _at(t, pos)
    return s is not None and not (type(s) is Var and s.name.startswith("_"))


def match_sequential(theory: Theory, patterns: Sequence[Term], m: Term) -> list[dict]:
    """Bindings from matching ``m`` against each pattern in turn, carrying
    bindings forward; blank variables are dropped."""
    sols = [{}]
    for p in patterns:
        nxt = []
        for s in sols:
            for r in theory.match(p, m, {k: v for k, v in s.items()}):
                nxt.append({k: v for k, v in r.items() if not k.name.startswith("_")})
        sols = nxt
    out, seen = [], set()
    for s in sols:
        key = tuple(sorted(s.items(), key=lambda kv: (kv[0].name, repr(kv[1]))))
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


# -- per-role pattern obligations --------------------------------------------


def role_patterns(spec) -> list[tuple[str, Term, tuple[Var, ...]]]:
    """(rule, pattern, bound variables) for every received message of ``spec``."""
    from .transform import buffer_name

    inbuf = buffer_name("In", spec.role)
    out = []
    for c in spec.clauses:
        for f in c.lhs:
            if f.name != inbuf:
                continue
            others = set()
            for g in c.lhs:
                if g is not f:
                    for a in g.args:
                        others |= variables(a)
            others |= variables(f.args[0])
            out.append((c.rule, f.args[-1], tuple(sorted(others, key=lambda v: v.name))))
    return out


def emit_pattern_obligations(spec, alg: Algebra, policy: NamePolicy | None = None) -> list[Obligation]:
    """One pattern-requirement obligation per linear received pattern of ``spec``.

    Non-linear patterns are split first.  The status follows from the image
    disjointness and pattern injectivity obligations of the symbols in the
    pattern.
    """
    ids = check_image_disjointness(alg, policy=policy)
    out = []
    for rule, t, bound in role_patterns(spec):
        if type(t) is Var:
            out.append(Obligation("PatternRequirement", (rule,), PROVED, show(t), spec.role, detail="variable pattern", term=t))
            continue
        prior: set = set(bound)
        for lin in split_nonlinear(t, bound):
            syms = set(_symbols_in(lin))
            parts = [o for o in ids if o.subject == ("names", "names") or set(o.subject) & syms]
            parts += check_pattern_injectivity(lin, alg)
            statuses = {o.status for o in parts}
            if FAILED in statuses:
                status = FAILED
            elif ASSUMED_CRYPTO in statuses:
                status = PROVED_WITH_CRYPTO
            else:
                status = PROVED
            failed = sorted({"/".join(o.subject) for o in parts if o.status == FAILED})
            here = {v for v in variables(lin) if not v.name.startswith("_")}
            params = tuple(sorted(v.name for v in here & prior))
            prior |= here
            out.append(
                Obligation(
                    "PatternRequirement",
                    (rule,),
                    status,
                    show(lin),
                    spec.role,
                    detail=("fails: " + ", ".join(failed)) if failed else "",
                    params=params,
                    term=lin,
                )
            )
    return out


def collision_freedom(spec) -> Obligation:
    """The collision-freedom assumption on restricted equalities, always assumed."""
    return Obligation("CollisionFreedom", ("eq-restrictions",), ASSUMED, role=spec.role, detail="not checked")


# -- bounded collision search --------------------------------------------------


def collision_search(
    alg: Algebra,
    pattern: Term,
    pool: Sequence[Term],
    depth_bound: int = 2,
    max_arity: int = 2,
    cap: int = 200_000,
):
    """Look for ``m`` and ``σ`` with γ(m) = γ(tσ) although ``m`` matches no
    instance of ``t``.

    Variables range over the pool by sort; message variables over ground
    terms of depth <= ``depth_bound`` built with symbols of arity <=
    ``max_arity``.  Candidate messages ``m`` are all parses of γ(tσ),
    including ones over public names outside the pool.  Returns
    ``(m, σ)`` or None.
    """
    th = alg.theory
    fresh = [n for n in pool if type(n) is Fresh]
    pubs = [n for n in pool if type(n) is Pub]
    small = [s for s in th.symbols.values() if s.arity <= max_arity]
    msgs = enumerate_ground(pool, small, depth_bound, th, cap=cap)
    vs = sorted(variables(pattern), key=lambda v: v.name)
    doms = [fresh if v.sort == "fresh" else pubs if v.sort == "pub" else msgs for v in vs]
    parse_depth = depth(pattern) + depth_bound + 1
    memo: dict = {}
    for combo in itertools.product(*doms):
        sigma = dict(zip(vs, combo))
        inst = th.normalize(substitute(pattern, sigma))
        try:
            b = alg.gamma(inst)
        except EncodingError:
            continue
        if len(memo) > 1 << 18:
            memo.clear()
        for m in sorted(alg.parse_terms(b, parse_depth, memo), key=repr):
            if not th.match(pattern, m):
                return m, sigma
    return None
