"""Command line: ``fsdroid analyze|interp|fuzz|emit-chc``.

Exit codes: 0 no leak, 1 leak (or soundness violation for ``fuzz``),
2 inconclusive because a budget ran out, 3 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

from . import concrete as cc
from . import soundness as sd
from . import solver as so
from .clausegen import translate
from .frontend import ParseError, default_entries, parse_program, parse_sources_sinks

EXIT_OK, EXIT_LEAK, EXIT_INCONCLUSIVE, EXIT_INPUT = 0, 1, 2, 3
CORPUS = ("leaky", "anon")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not "inconclusive"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror or e}") from e


def load_inputs(program: str, sources_sinks: Optional[str]) -> tuple:
    """Program text and config; ``@name`` picks a bundled corpus program."""
    if program.startswith("@"):
        name = program[1:]
        if name not in CORPUS:
            raise InputError(f"unknown corpus program {name}; choose from {', '.join(CORPUS)}")
        d = resources.files("fsdroid") / "corpus"
        text = (d / f"{name}.dalvik").read_text(encoding="utf-8")
        ss = _read(sources_sinks) if sources_sinks else (d / f"{name}.sources-sinks").read_text(encoding="utf-8")
    else:
        text = _read(program)
        if sources_sinks is None:
            sibling = Path(program).with_suffix(".sources-sinks")
            ss = sibling.read_text(encoding="utf-8") if sibling.exists() else ""
        else:
            ss = _read(sources_sinks)
    prog = parse_program(text)
    cfg = default_entries(prog, parse_sources_sinks(ss))
    cfg.validate(prog)
    return prog, cfg


def load_model(path: Optional[str]):
    if path is None:
        return None
    try:
        return cc.LifecycleModel.from_json(_read(path))
    except (ValueError, KeyError, TypeError) as e:
        raise InputError(f"bad lifecycle model {path}: {e}") from e


def _emit(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# -- subcommands ------------------------------------------------------------


def cmd_analyze(args) -> int:
    prog, cfg = load_inputs(args.program, args.sources_sinks)
    model = load_model(args.lifecycle)
    rs = translate(prog, cfg, model, flow_insensitive=args.flow_insensitive)
    res = so.saturate(rs, mode=args.mode, prune=args.prune, max_facts=args.budget_facts,
                      max_steps=args.budget_steps, record=args.explain)
    report = so.query_leak(res)
    if args.emit_chc:
        _emit(so.emit_chc(rs), args.emit_chc)
    explanations = [so.explain(res, lk) for lk in report.leaks] if args.explain else []
    if args.json:
        d = report.as_dict()
        d.update(program=args.program, facts=res.base.counts(), clauses=len(rs.clauses),
                 flow_insensitive=args.flow_insensitive)
        if args.explain:
            d["explanations"] = [e.splitlines() for e in explanations]
        print(json.dumps(d, indent=2, sort_keys=True, ensure_ascii=False))
    else:
        counts = " ".join(f"{k}={v}" for k, v in res.base.counts().items())
        print(f"program: {args.program}")
        print(f"status: {res.status}")
        print(f"facts: {len(res.base)} ({counts})")
        print(f"leaks: {len(report.leaks)}")
        for lk in report.leaks:
            print(f"  {lk.sink[0]}.{lk.sink[1]} argument {lk.arg_index} (r{lk.register})")
        print(f"verdict: {report.verdict}")
        for e in explanations:
            print(e)
    return {"leak": EXIT_LEAK, "no-leak": EXIT_OK}.get(report.verdict, EXIT_INCONCLUSIVE)


def cmd_interp(args) -> int:
    prog, cfg = load_inputs(args.program, args.sources_sinks)
    model = load_model(args.lifecycle)
    schedule = tuple(s for s in (args.schedule or "").split(",") if s)
    n_init = len(cc.Interpreter(prog, cfg, model).initial_configs())
    ex = cc.explore(prog, cfg, model, max_configs=n_init + args.budget_steps, seed=args.seed,
                    schedule=schedule, keep_configs=False)
    if args.json:
        print(json.dumps({"schema": "fsdroid.interp/1", "program": args.program, "configurations": len(ex.parents),
                          "transitions": ex.transitions, "exhausted": ex.exhausted,
                          "witnesses": [w.as_dict() for w in ex.witnesses]}, indent=2, sort_keys=True))
    else:
        print(f"program: {args.program}")
        print(f"configurations: {len(ex.parents)}{' (budget exhausted)' if ex.exhausted else ''}")
        print(f"witnesses: {len(ex.witnesses)}")
        for w in ex.witnesses:
            d = w.as_dict()
            print(f"  {d['sink']} argument {d['argument']} ({d['register']}) after {len(w.trace)} steps")
            for step in d["trace"]:
                print(f"    {step}")
    if ex.witnesses:
        return EXIT_LEAK
    return EXIT_INCONCLUSIVE if ex.exhausted else EXIT_OK


def cmd_fuzz(args) -> int:
    kw = dict(max_configs=args.budget_steps, max_facts=args.budget_facts)
    results = []
    if args.corpus:
        for name in CORPUS:
            prog_text = (resources.files("fsdroid") / "corpus" / f"{name}.dalvik").read_text(encoding="utf-8")
            ss = (resources.files("fsdroid") / "corpus" / f"{name}.sources-sinks").read_text(encoding="utf-8")
            cfg = default_entries(parse_program(prog_text), parse_sources_sinks(ss))
            results.append(sd.differential_test(prog_text, cfg=cfg, **kw))
    results.extend(sd.fuzz(args.trials, seed=args.seed, max_statements=args.max_statements, **kw))
    _emit(sd.report_json(results) + "\n", args.output)
    if not args.json and args.output not in (None, "-"):
        bad = sum(r.verdict == "unsound" for r in results)
        print(f"{len(results)} programs, {bad} soundness violations")
    return EXIT_LEAK if any(r.verdict == "unsound" for r in results) else EXIT_OK


def cmd_emit_chc(args) -> int:
    prog, cfg = load_inputs(args.program, args.sources_sinks)
    rs = translate(prog, cfg, load_model(args.lifecycle), flow_insensitive=args.flow_insensitive)
    _emit(so.emit_chc(rs), args.output)
    return EXIT_OK


def _positive(text: str) -> int:
    try:
        n = int(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"not an integer: {text}") from e
    if n < 0:
        raise argparse.ArgumentTypeError("budgets must be non-negative")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fsdroid", description="Flow-sensitive taint analysis via Horn clauses.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, budget_steps_default, budget_steps_help):
        sp.add_argument("--sources-sinks", metavar="FILE",
                        help="sources/sinks/entry file (default: sibling .sources-sinks file)")
        sp.add_argument("--lifecycle", metavar="FILE", help="JSON lifecycle model")
        sp.add_argument("--budget-steps", type=_positive, default=budget_steps_default, help=budget_steps_help)
        sp.add_argument("--budget-facts", type=_positive, default=200_000, help="maximum number of derived facts")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    a = sub.add_parser("analyze", help="run the static analysis")
    a.add_argument("program", help="program file, or @leaky / @anon")
    common(a, None, "maximum solver worklist steps")
    a.add_argument("--explain", action="store_true", help="print derivations of each leak")
    a.add_argument("--flow-insensitive", action="store_true", help="ablation: lift every allocation eagerly")
    a.add_argument("--mode", choices=("semi-naive", "naive", "parallel"), default="semi-naive")
    a.add_argument("--prune", action="store_true", help="keep only maximal facts per key")
    a.add_argument("--emit-chc", metavar="FILE", help="also write the clause system as CHC text")
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("interp", help="explore the concrete semantics")
    i.add_argument("program")
    common(i, 5000, "configurations explored beyond the initial ones")
    i.add_argument("--schedule", metavar="CB1,CB2,...", help="report witnesses only after these callbacks ran")
    i.set_defaults(func=cmd_interp)

    f = sub.add_parser("fuzz", help="differential soundness testing on random programs")
    common(f, 3000, "configurations explored per program")
    f.add_argument("--trials", type=_positive, default=100)
    f.add_argument("--max-statements", type=_positive, default=20)
    f.add_argument("--corpus", action="store_true", help="also check the bundled corpus programs")
    f.add_argument("--output", "-o", metavar="FILE", help="write the JSON report here instead of stdout")
    f.set_defaults(func=cmd_fuzz)

    e = sub.add_parser("emit-chc", help="print the clause system as CHC text")
    e.add_argument("program")
    common(e, None, "unused")
    e.add_argument("--flow-insensitive", action="store_true")
    e.add_argument("--output", "-o", metavar="FILE")
    e.set_defaults(func=cmd_emit_chc)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ParseError) as e:
        print(f"fsdroid: error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
