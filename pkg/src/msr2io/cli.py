"""Command-line front end.

Exit codes: 0 ok, 1 counterexample or failed obligation, 2 usage,
3 parse or validation error, 4 search budget exhausted.  Artifacts go to
``--out-dir``; logs go to stderr and carry no timing data.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .frontend import InvalidModel, ModelSyntaxError, parse, validate
from .msr import BudgetExceeded

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INVALID, EXIT_BUDGET = 0, 1, 2, 3, 4

CLAIMS = ("L1", "L2", "T1", "SEC", "AGREE", "E2E")
FLAVORS = ("gobra", "verifast", "ir-json")


class UsageError(Exception):
    pass


# -- configuration -------------------------------------------------------------

_INT_KEYS = {
    "depth", "fresh", "pub", "term_depth", "msg_depth", "budget", "instances",
    "secret_pos", "par_depth", "fresh_len", "pub_max_len", "input_fresh", "input_pub",
}
_BOOL_KEYS = {"par_search"}
_STR_KEYS = {"roles", "search", "secret_fact", "commit", "running", "pairs", "par_pool"}


@dataclass
class Config:
    """Bounds and pools; every key is optional."""

    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    @classmethod
    def parse(cls, text: str, origin: str = "<config>") -> "Config":
        vals: dict = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                key, _, val = line.partition(":")
                if not _:
                    raise UsageError(f"{origin}:{n}: expected key = value")
            key, val = key.strip(), val.strip()
            if key in _INT_KEYS:
                try:
                    vals[key] = int(val)
                except ValueError:
                    raise UsageError(f"{origin}:{n}: {key} needs an integer") from None
            elif key in _BOOL_KEYS:
                if val.lower() not in ("true", "false", "yes", "no", "1", "0"):
                    raise UsageError(f"{origin}:{n}: {key} needs a boolean")
                vals[key] = val.lower() in ("true", "yes", "1")
            elif key in _STR_KEYS:
                vals[key] = val
            else:
                raise UsageError(f"{origin}:{n}: unknown key {key!r}")
        return cls(vals)


def _roles(cfg: Config, model) -> dict[str, int]:
    spec = cfg.get("roles")
    if not spec:
        return {r: 1 for r in sorted(model.roles)}
    out = {}
    for part in spec.split(","):
        name, _, k = part.strip().partition(":")
        if name not in model.roles:
            raise UsageError(f"unknown role {name!r}")
        out[name] = int(k or 1)
    return out


# -- logging -------------------------------------------------------------------


def _log(msg: str) -> None:
    print(f"msr2io: {msg}", file=sys.stderr)


def _write(out_dir: Path | None, name: str, text: str) -> None:
    if out_dir is None:
        return
    path = out_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    _log(f"wrote {out_dir / name}")


# -- stages --------------------------------------------------------------------


def _load(path: str, json_diag: bool = False):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    try:
        res = validate(parse(text))
    except ModelSyntaxError as e:
        if json_diag:
            print(json.dumps([{"severity": "error", "assumption": "syntax", "where": "",
                               "message": e.msg_text, "span": [e.line, e.col]}], indent=2))
        else:
            print(f"{path}: syntax error: {e}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID) from None
    if isinstance(res, list):
        if json_diag:
            print(json.dumps([d.to_json() for d in res], indent=2))
        else:
            for d in res:
                print(f"{path}:{d}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)
    return res


def _split(model):
    from .transform import build_interface, split_io

    return split_io(build_interface(model))


def _specs(split):
    from .iospec import gen_iospec

    return {role: gen_iospec(split, role) for role in sorted(split.roles)}


def _obligations(model, specs, cfg: Config):
    from .bytestrings import Algebra, NamePolicy, check_image_disjointness, collision_freedom, emit_pattern_obligations

    policy = NamePolicy(
        **{k: cfg.get(k) for k in ("fresh_len", "pub_max_len") if cfg.get(k) is not None}
    )
    alg = Algebra.of_model(model)
    obs = list(check_image_disjointness(alg, policy=policy))
    for role, spec in specs.items():
        obs.extend(emit_pattern_obligations(spec, alg, policy))
        obs.append(collision_freedom(spec))
    if cfg.get("par_search"):
        obs = _par_search(alg, obs, cfg)
    return obs


def _par_search(alg, obs, cfg: Config):
    """Mark pattern obligations failed, with the witness as detail, when the bounded search finds one."""
    from dataclasses import replace

    from .bytestrings import collision_search
    from .terms import Fresh, Pub

    pool_spec = cfg.get("par_pool", "~n1,~n2,p1")
    pool = [Fresh(x[1:]) if x.startswith("~") else Pub(x) for x in (p.strip() for p in pool_spec.split(","))]
    out = []
    for ob in obs:
        if ob.kind == "PatternRequirement" and ob.term is not None:
            hit = collision_search(alg, ob.term, pool, depth_bound=cfg.get("par_depth", 2))
            if hit is not None:
                m, sigma = hit
                sub = ", ".join(f"{k}={v}" for k, v in sorted((str(k), str(v)) for k, v in sigma.items()))
                ob = replace(ob, status="failed", detail=f"collision witness {m} under {{{sub}}}")
        out.append(ob)
    return out


def _obligation_report(obs) -> tuple[str, str]:
    doc = json.dumps([o.to_json() for o in obs], indent=2, sort_keys=True) + "\n"
    rows = [("kind", "role", "subject", "status")]
    rows += [(o.kind, o.role or "-", " / ".join(o.subject), o.status) for o in obs]
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    table = "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in rows)
    return doc, table


# wall time, and right-side work that stops at the first accepting path
# (its count depends on set iteration order)
_VOLATILE_STATS = {"seconds", "right_transitions"}


def _verdict_doc(verdicts) -> str:
    docs = []
    for v in verdicts:
        d = v.to_json()
        d["stats"] = {k: x for k, x in d["stats"].items() if k not in _VOLATILE_STATS}
        docs.append(d)
    return json.dumps(docs, indent=2, sort_keys=True) + "\n"


def _chain_universe(model, rids, cfg: Config):
    from .oracle import chain_universe

    return chain_universe(
        model, rids, cfg.get("fresh", 2), cfg.get("pub", 2), cfg.get("term_depth", 1), cfg.get("msg_depth", 1)
    )


def _input_universe(u, cfg: Config):
    from .oracle import input_universe

    return input_universe(u, cfg.get("input_fresh", 2), cfg.get("input_pub", 1))


def _run_claim(claim: str, model, cfg: Config, depth: int | None, role: str | None, impl) -> list:
    from . import oracle
    from .transform import rid_instances

    if role is not None and role not in model.roles:
        raise UsageError(f"unknown role {role!r}")
    rids = rid_instances(_roles(cfg, model))
    if claim in ("SEC", "AGREE"):
        d = depth if depth is not None else cfg.get("depth", 6)
        u = model.universe(cfg.get("fresh", 2), cfg.get("pub", 2), cfg.get("term_depth", 2), cfg.get("msg_depth", 1))
        if claim == "SEC":
            prop = oracle.Secrecy(cfg.get("secret_fact", "Secret"), cfg.get("secret_pos", 0))
        else:
            if not cfg.get("commit") or not cfg.get("running"):
                raise UsageError("AGREE needs commit and running facts in --config")
            pairs = tuple(
                tuple(int(x) for x in p.split(":")) for p in cfg.get("pairs", "0:0").split(",") if p.strip()
            )
            prop = oracle.Agreement(cfg.get("commit"), cfg.get("running"), pairs)
        try:
            v = oracle.check_property(
                model, prop, d, u, search=cfg.get("search", "exhaustive"), budget=cfg.get("budget", 2_000_000),
                instances=cfg.get("instances", 1),
            )
        except ValueError as e:
            raise UsageError(str(e)) from None
        return [v]
    d = depth if depth is not None else cfg.get("depth", 5)
    u = _chain_universe(model, rids, cfg)
    split = _split(model)
    kw = {"cap": cfg.get("budget", 5_000_000)}
    if claim == "L1":
        return [oracle.check_l1(model, split.intf, u, d, **kw)]
    if claim == "L2":
        return [oracle.check_l2(split, u, rids, d, **kw)]
    if claim == "T1":
        roles = [role] if role else sorted({r for r, _ in rids})
        impl_split = _split(impl) if impl is not None else None
        out = []
        for ro in roles:
            rid = next(r for x, r in rids if x == ro)
            out.append(
                oracle.check_t1(split, ro, rid, u, d, impl_split=impl_split, inputs=_input_universe(u, cfg), **kw)
            )
        return out
    return oracle.check_end_to_end(model, rids, d, u, **kw)


# -- subcommands ---------------------------------------------------------------


def cmd_validate(args, cfg) -> int:
    model = _load(args.model, args.json_diagnostics)
    warnings = getattr(model, "warnings", [])
    if args.json_diagnostics:
        print(json.dumps([d.to_json() for d in warnings], indent=2))
    else:
        for d in warnings:
            print(f"{args.model}:{d}", file=sys.stderr)
        _log(f"{args.model}: model {model.name} is valid ({len(model.rules)} rules)")
    return EXIT_OK


def cmd_transform(args, cfg) -> int:
    from .transform import split_to_json

    model = _load(args.model)
    text = split_to_json(_split(model))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        _log(f"wrote {args.out}")
    elif args.out_dir:
        _write(Path(args.out_dir), "intf.json", text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _spec_files(model, specs, obs, flavors) -> dict[str, str]:
    from .backends import render

    files = {}
    for role, spec in specs.items():
        mine = [o for o in obs if o.role == role]
        for fl in flavors:
            for name, text in render(spec, mine, fl).items():
                files[name if fl == "ir-json" else f"{fl}/{name}"] = text
    return files


def cmd_genspec(args, cfg) -> int:
    model = _load(args.model)
    specs = _specs(_split(model))
    if args.role:
        if args.role not in specs:
            raise UsageError(f"unknown role {args.role!r}")
        specs = {args.role: specs[args.role]}
    flavors = FLAVORS if args.flavor == "all" else (args.flavor,)
    obs = _obligations(model, specs, cfg)
    files = _spec_files(model, specs, obs, flavors)
    if args.out_dir:
        for name, text in sorted(files.items()):
            _write(Path(args.out_dir), name, text)
    else:
        for name, text in sorted(files.items()):
            sys.stdout.write(f"// ---- {name}\n{text}")
    return EXIT_OK


def cmd_obligations(args, cfg) -> int:
    model = _load(args.model)
    if args.par_search:
        cfg.values["par_search"] = True
    obs = _obligations(model, _specs(_split(model)), cfg)
    doc, table = _obligation_report(obs)
    if args.out_dir:
        _write(Path(args.out_dir), "obligations.json", doc)
        _write(Path(args.out_dir), "obligations.txt", table)
    else:
        sys.stdout.write(table)
    failed = [o for o in obs if o.status == "failed"]
    for o in failed:
        _log(f"failed obligation {o.kind} {' / '.join(o.subject)}: {o.detail}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_check(args, cfg) -> int:
    model = _load(args.model)
    impl = _load(args.impl) if args.impl else None
    if impl is not None and args.claim != "T1":
        raise UsageError("--impl only applies to --claim T1")
    verdicts = _run_claim(args.claim, model, cfg, args.depth, args.role, impl)
    doc = _verdict_doc(verdicts)
    sys.stdout.write(doc)
    out_dir = Path(args.out_dir) if args.out_dir else None
    _write(out_dir, "verdicts.json", doc)
    bad = [v for v in verdicts if not v.holds]
    for v in bad:
        _log(f"{v.claim}: counterexample of length {len(v.witness or [])}")
    if bad:
        wpath = Path(args.witness) if args.witness else (out_dir or Path(".")) / "witness.json"
        wpath.parent.mkdir(parents=True, exist_ok=True)
        wpath.write_text(json.dumps({v.claim: v.witness for v in bad}, indent=2, sort_keys=True) + "\n")
        _log(f"wrote {wpath}")
        return EXIT_FAIL
    return EXIT_OK


def cmd_pipeline(args, cfg) -> int:
    from .iospec import spec_to_json
    from .transform import split_to_json

    model = _load(args.model)
    out = Path(args.out_dir)
    split = _split(model)
    _write(out, "intf.json", split_to_json(split))
    specs = _specs(split)
    for role, spec in specs.items():
        _write(out, f"{role.lower()}.iospec.json", spec_to_json(spec))
    obs = _obligations(model, specs, cfg)
    for name, text in sorted(_spec_files(model, specs, obs, ("gobra", "verifast")).items()):
        _write(out, name, text)
    doc, table = _obligation_report(obs)
    _write(out, "obligations.json", doc)
    _write(out, "obligations.txt", table)
    depth = args.depth if args.depth is not None else cfg.get("depth", 5)
    verdicts = _run_claim("E2E", model, cfg, depth, None, None)
    _write(out, "verdicts.json", _verdict_doc(verdicts))
    for v in verdicts:
        _log(f"{v.claim}: {v.status}")
    failed = [o for o in obs if o.status == "failed"]
    return EXIT_FAIL if failed or not all(v.holds for v in verdicts) else EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msr2io", description="Compile MSR protocol models into per-role I/O specs.")
    sub = p.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("model", help="model file")
        sp.add_argument("--config", help="flat key = value file with bounds and pools")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("validate", cmd_validate, "parse and validate a model")
    sp.add_argument("--json-diagnostics", action="store_true", help="print diagnostics as JSON on stdout")
    sp = add("transform", cmd_transform, "emit the interface model and split components")
    sp.add_argument("--out", help="output file (default stdout)")
    sp.add_argument("--out-dir", help="write intf.json into this directory")
    sp = add("genspec", cmd_genspec, "render per-role I/O specifications")
    sp.add_argument("--role")
    sp.add_argument("--flavor", choices=FLAVORS + ("all",), default="all")
    sp.add_argument("--out-dir")
    sp = add("obligations", cmd_obligations, "byte-level proof obligations")
    sp.add_argument("--out-dir")
    sp.add_argument("--par-search", action="store_true", help="run the bounded collision search per pattern")
    sp = add("check", cmd_check, "bounded refinement and property checks")
    sp.add_argument("--claim", choices=CLAIMS, required=True)
    sp.add_argument("--depth", type=int)
    sp.add_argument("--role")
    sp.add_argument("--impl", help="implementation role model checked against the model's specs (T1)")
    sp.add_argument("--out-dir")
    sp.add_argument("--witness", help="where to write a counterexample (default <out-dir>/witness.json)")
    sp = add("pipeline", cmd_pipeline, "run every stage and write all artifacts")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--depth", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = Config()
        if args.config:
            try:
                cfg = Config.parse(Path(args.config).read_text(), args.config)
            except OSError as e:
                raise UsageError(f"cannot read {args.config}: {e.strerror}") from None
        if getattr(args, "depth", None) is not None and args.depth < 0:
            raise UsageError("--depth must be >= 0")
        return args.fn(args, cfg)
    except UsageError as e:
        print(f"msr2io: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)
    except InvalidModel as e:
        print(f"msr2io: {e}", file=sys.stderr)
        return EXIT_INVALID
    except BudgetExceeded as e:
        print(f"msr2io: budget exhausted: {e}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
