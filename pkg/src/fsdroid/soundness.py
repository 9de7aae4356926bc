"""Differential soundness: concrete exploration against the saturated fact base.

Every concrete configuration is abstracted with all locations summarised
(the trivial split of the heap), so register and context values are compared
up to the FS/NFS distinction and heap objects are checked against H facts or
against some local heap that holds them.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Optional

from . import absdomain as ad
from . import concrete as cc
from .clausegen import translate
from .frontend import AnalysisConfig, ParseError, Program, parse_program
from .solver import COMPLETE, SaturationResult, query_leak, render_fact, saturate


# ---------------------------------------------------------------------------
# abstraction of concrete values


def beta_value(v) -> ad.AValue:
    if isinstance(v, cc.Loc):
        return ad.nfs(v.label)
    return ad.beta_prim(v.kind, v.payload, v.taint)


def beta_block(b) -> ad.ABlock:
    if isinstance(b, cc.Obj):
        return ad.abs_obj(b.cls, [(n, beta_value(x)) for n, x in zip(b.names, b.vals)])
    if isinstance(b, cc.Arr):
        return ad.abs_array(b.elem, ad.join_all(beta_value(x) for x in b.vals))
    return ad.abs_intent(b.cls, ad.join_all(beta_value(x) for x in cc.tainted_values(b)))


@dataclass(frozen=True)
class AbstractionOptions:
    """Only the trivial split is implemented: every location global, local heaps empty, no filter history."""

    decomposition: str = "trivial"
    filter_history: tuple = ()


def beta_filter(locs, sites: ad.SiteTable) -> int:
    """Abstract filter of a set of concrete locations: the allocation sites among their labels."""
    k = 0
    for loc in locs:
        i = sites.index.get(loc.label)
        if i is not None:
            k |= 1 << i
    return k


@dataclass(frozen=True)
class ConcreteFact:
    """A fact the concrete configuration demands from the abstraction."""

    pred: str
    key: object
    ctx: tuple = ()
    regs: tuple = ()
    payload: object = None

    def render(self) -> str:
        if self.pred in ("L", "A"):
            regs = ", ".join(ad.render_value(v) for v in self.regs)
            ctx = ", ".join(ad.render_value(v) for v in (self.ctx[0],) + self.ctx[1])
            return f"{'LState' if self.pred == 'L' else 'AState'}⟨{ad.render_label(self.key)}⟩(({ctx}); [{regs}])"
        if self.pred == "S":
            return f"S({self.key[0]}.{self.key[1]}, {ad.render_value(self.payload)})"
        return f"{self.pred}({ad.render_label(self.key)}, {ad.render_block(self.payload)})"


def beta_config(psi: cc.Config) -> list:
    """Facts a configuration needs, in a stable order."""
    out: list = []

    def frames(owner: cc.Loc, st: cc.Stack):
        lt = ad.nfs(owner.label)
        top = True
        for fr in st.frames:
            if isinstance(fr, cc.Waiting):
                top = False
                continue
            pred = "A" if (top and st.abnormal) else "L"
            out.append(ConcreteFact(pred, fr.pp, (lt, tuple(beta_value(x) for x in fr.ctx)),
                                    tuple(beta_value(x) for x in fr.regs)))
            top = False

    def pending(owner: cc.Loc, pi, gamma):
        for i in pi:
            out.append(ConcreteFact("I", owner.label, payload=beta_block(i)))
        for tl in gamma:
            b = psi.heap.get(tl.ptr)
            if b is not None:
                out.append(ConcreteFact("T", tl.label, payload=beta_block(b)))

    for f in psi.acts:
        frames(f.loc, f.stack)
        pending(f.loc, f.pi, f.gamma)
    for t in psi.threads:
        frames(t.tloc, t.stack)
        pending(t.tloc, t.pi, t.gamma)
    # unreachable objects are kept when some value still names them; an unnamed block has no label
    labels = _labels(psi)
    for p in sorted(psi.heap):
        if p in labels:
            out.append(ConcreteFact("H", labels[p], payload=beta_block(psi.heap[p])))
    for key in sorted(psi.statics):
        out.append(ConcreteFact("S", key, payload=beta_value(psi.statics[key])))
    return out


def _labels(psi: cc.Config) -> dict:
    out = {}
    vals = list(cc._roots(psi))
    for b in psi.heap.values():
        vals.extend(cc.block_values(b))
    for v in vals:
        if isinstance(v, cc.Loc):
            out[v.ptr] = v.label
    return out


# ---------------------------------------------------------------------------
# subsumption


@dataclass
class SubsumptionVerdict:
    ok: bool
    missing: list = field(default_factory=list)
    closest: Optional[str] = None  # best candidate for the first missing fact

    @property
    def holds(self) -> bool:
        return self.ok

    def as_dict(self) -> dict:
        return {"ok": self.ok, "missing": [m.render() for m in self.missing], "closest": self.closest}


def _seq_leq(xs, ys) -> bool:
    return len(xs) == len(ys) and all(ad.leq_nfs(x, y) for x, y in zip(xs, ys))


class SubsumptionChecker:
    """Answers "is this concrete fact covered?" against one saturated base."""

    def __init__(self, res: SaturationResult):
        self.res = res
        self.sites = res.rules.sites
        self._local_blocks: dict = {}
        for f in res.base:
            if f.pred in ("L", "A"):
                for i, b in enumerate(f.heap):
                    if b is not None:
                        self._local_blocks.setdefault(self.sites.sites[i], set()).add(b)

    def covered(self, cf: ConcreteFact) -> bool:
        base = self.res.base
        if cf.pred in ("L", "A"):
            for f in base.get(cf.pred, cf.key):
                if (ad.leq_nfs(cf.ctx[0], f.ctx[0]) and _seq_leq(cf.ctx[1], f.ctx[1])
                        and _seq_leq(cf.regs, f.regs)):
                    return True
            return False
        if cf.pred == "S":
            return any(ad.leq_nfs(cf.payload, g.payload) for g in base.get("S", cf.key))
        if any(ad.block_leq_nfs(cf.payload, g.payload) for g in base.get(cf.pred, cf.key)):
            return True
        if cf.pred == "H":
            return any(ad.block_leq_nfs(cf.payload, b) for b in self._local_blocks.get(cf.key, ()))
        return False

    def closest(self, cf: ConcreteFact) -> Optional[str]:
        """Same-key base fact agreeing with ``cf`` on the most components."""
        best, score = None, -1
        for f in self.res.base.get(cf.pred, cf.key):
            if cf.pred in ("L", "A"):
                sc = sum(ad.leq_nfs(x, y) for x, y in zip(cf.regs + cf.ctx[1], f.regs + f.ctx[1]))
            elif cf.pred == "S":
                sc = 0
            else:
                sc = sum(ad.leq_nfs(x, y) for x, y in zip(cf.payload.vals, f.payload.vals))
            if sc > score:
                best, score = f, sc
        return None if best is None else render_fact(best, self.sites)

    def check(self, facts) -> SubsumptionVerdict:
        """``facts``: a configuration, or an iterable of concrete or solver facts."""
        if isinstance(facts, cc.Config):
            facts = beta_config(facts)
        missing = [cf for cf in map(as_concrete_fact, facts) if cf is not None and not self.covered(cf)]
        return SubsumptionVerdict(not missing, missing, self.closest(missing[0]) if missing else None)


def as_concrete_fact(f) -> Optional[ConcreteFact]:
    """Solver facts viewed as demands; summaries and RHS facts are not part of a configuration."""
    if isinstance(f, ConcreteFact):
        return f
    if f.pred in ("L", "A"):
        return ConcreteFact(f.pred, f.pp, f.ctx, f.regs)
    if f.pred in ("H", "I", "T", "S"):
        return ConcreteFact(f.pred, f.key, payload=f.payload)
    return None


def check_subsumed(facts, res: SaturationResult) -> SubsumptionVerdict:
    return SubsumptionChecker(res).check(facts)


# ---------------------------------------------------------------------------
# random programs


_CALLBACKS = ("onStart", "onResume", "onPause", "onStop", "onRestart")

# statement templates for an activity method with locals r0:Box r1:String r2:int and this=r3
_ACT_STMTS = (
    ["new r0 Box"], ["move r0 r3.a"], ["move r0 r3.b"], ["move r3.a r0"], ["move r3.b r0"],
    ["move r1 r0.v"], ["move r0.v r1"], ["move r0.w r0"], ["move r0 r0.w"],
    ['move r1 "x"'], ["move r2 1"], ["binop r2 add r2 r2"], ["move r3.s r1"], ["move r1 r3.s"],
    ["invoke r3 src()", "move r1 ret"], ["invoke r3 snk() r1"], ["invoke r3 snk() r0"],
    ["move Main.g r0"], ["move r0 Main.g"], ["IF"],
    ["new r0 Worker", "move r0.b r1", "start-thread r0", "move r0 r3.a"],
    ["invoke r3 helper() r0"],
    ["invoke r3 src()", "move r1 ret", "move r0.v r1"], ["move r1 r3.s", "invoke r3 snk() r1"],
    ["move r1 r0.v", "invoke r3 snk() r1"],
)
# sources, sinks and heap round trips are drawn more often so leaks actually occur
_ACT_WEIGHTS = tuple(3 if len(t) > 1 or t[0].startswith(("invoke", "move r0.v", "move r3.s")) else 1 for t in _ACT_STMTS)
# helper(Box): locals r0 r1, this r2, the Box argument r3
_HELPER_STMTS = (["move r0 r3.v"], ["move r3.v r1"], ['move r1 "y"'], ["move r3.v r1"], ["move r3.w r3"],
                 ["move r2.a r3"])
_RUN_STMTS = (["move r0 r1.b"], ["move r0 r1.b", "move r1.b r0"], ["move r0 Main.g"], ['move r0 "t"'])


def _body(rng: random.Random, templates, budget: int, weights=None) -> list:
    out: list = []
    n = rng.randint(budget // 2, budget) if budget > 0 else 0
    while len(out) < n:
        t = rng.choices(templates, weights)[0]
        if t == ["IF"]:
            out.append("IF")
        else:
            out.extend(t)
    # forward conditional jumps only, resolved once the length is known
    end = len(out)
    res = []
    for pc, s in enumerate(out):
        if s == "IF":
            res.append(f"if r2 > r2 goto {rng.randint(pc + 1, end)}")
        else:
            res.append(s)
    return res


def random_program(seed: int, max_statements: int = 20) -> str:
    """A small well-typed program: one activity, a Box class and optionally a worker thread."""
    rng = random.Random(seed)
    cbs = ["<init>"] + rng.sample(_CALLBACKS, rng.randint(1, 3))
    budget = max_statements
    lines = [".class public Main", ".super Activity", ".field a:Box", ".field b:Box", ".field s:String",
             ".field static g:Box"]
    for m in cbs:
        per = max(0, min(budget, rng.randint(3, 8)))
        # r0 starts non-null so field accesses do not get the callback stuck at once;
        # r1 gets a string so every register holds a value of its declared role
        prefix = ["new r0 Box", "move r3.a r0"] if m == "<init>" else ["move r0 r3.a"]
        prefix.append('move r1 ""')
        body = prefix + _body(rng, _ACT_STMTS, per - len(prefix), _ACT_WEIGHTS)
        budget -= len(body)
        header = "constructor <init>()" if m == "<init>" else f"{m}()"
        lines += [f".method {header}", ".3 local registers"] + ["    " + s for s in body] + ["    return", ".end method"]
    helper = ['move r1 ""'] + _body(rng, _HELPER_STMTS, max(0, min(budget, 3)))
    budget -= len(helper)
    lines += [".method helper(Box)", ".2 local registers"] + ["    " + s for s in helper] + ["    return", ".end method"]
    lines += [".method src():String", ".0 local registers", '    move ret "secret"', "    return", ".end method",
              ".method snk(Object)", ".0 local registers", "    return", ".end method"]
    lines += [".class Box", ".field v:String", ".field w:Box"]
    run = _body(rng, _RUN_STMTS, max(0, min(budget, 3)))
    lines += [".class Worker", ".super Thread", ".field b:String",
              ".method run()", ".1 local register"] + ["    " + s for s in run] + ["    return", ".end method"]
    return "\n".join(lines) + "\n"


RANDOM_CONFIG = AnalysisConfig(frozenset({("Main", "src")}), frozenset({("Main", "snk")}), ("Main",))


def statement_count(text: str) -> int:
    return sum(1 for ln in text.splitlines() if ln.startswith("    "))


# ---------------------------------------------------------------------------
# differential testing


@dataclass
class DifferentialResult:
    program: str
    verdict: str  # sound | unsound | inconclusive | invalid
    configs: int = 0
    trace_length: int = 0
    missing: list = field(default_factory=list)
    missed_leaks: list = field(default_factory=list)
    minimized: Optional[str] = None

    @property
    def program_hash(self) -> str:
        return hashlib.sha256(self.program.encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        return {"schema": "fsdroid.differential/1", "program_hash": self.program_hash,
                "verdict": self.verdict, "configs": self.configs, "trace_length": self.trace_length,
                "missing": self.missing, "missed_leaks": self.missed_leaks,
                "minimized_program": self.minimized}


def differential(text: str, cfg: AnalysisConfig = RANDOM_CONFIG, max_configs: int = 3000,
                 max_facts: int = 100_000, model=None) -> DifferentialResult:
    """Explore ``text`` concretely and check every configuration against the analysis."""
    try:
        program = parse_program(text)
        cfg.validate(program)
    except ParseError:
        return DifferentialResult(text, "invalid")
    rs = translate(program, cfg, model)
    res = saturate(rs, max_facts=max_facts, record=False)
    if res.status != COMPLETE:
        return DifferentialResult(text, "inconclusive")
    ex = cc.explore(program, cfg, model, max_configs=max_configs)
    checker = SubsumptionChecker(res)
    for idx, psi in enumerate(ex.configs):
        verdict = checker.check(psi)
        if not verdict.ok:
            return DifferentialResult(text, "unsound", len(ex.configs), len(ex.trace_to(idx)),
                                      [m.render() for m in verdict.missing])
    reported = {(lk.sink, lk.arg_index) for lk in query_leak(res).leaks}
    missed = [f"{w.sink[0]}.{w.sink[1]}#{w.arg_index}" for w in ex.witnesses if (w.sink, w.arg_index) not in reported]
    if missed:
        return DifferentialResult(text, "unsound", len(ex.configs), len(ex.witnesses[0].trace), missed_leaks=missed)
    return DifferentialResult(text, "sound", len(ex.configs))


def minimize(text: str, still_failing) -> str:
    """Delta debugging over statement lines; keeps any reduction ``still_failing`` accepts."""
    lines = text.splitlines()
    stmt_idx = [i for i, ln in enumerate(lines) if ln.startswith("    ") and ln.strip() != "return"]
    n = 2
    while stmt_idx:
        chunk = max(1, len(stmt_idx) // n)
        reduced = False
        for start in range(0, len(stmt_idx), chunk):
            drop = set(stmt_idx[start:start + chunk])
            cand = "\n".join(ln for i, ln in enumerate(lines) if i not in drop) + "\n"
            if still_failing(cand):
                lines = cand.splitlines()
                stmt_idx = [i for i, ln in enumerate(lines) if ln.startswith("    ") and ln.strip() != "return"]
                n = max(n - 1, 2)
                reduced = True
                break
        if not reduced:
            if chunk == 1:
                break
            n = min(len(stmt_idx), n * 2)
    return "\n".join(lines) + "\n"


def differential_test(text: str, **kw) -> DifferentialResult:
    out = differential(text, **kw)
    if out.verdict == "unsound":
        out.minimized = minimize(text, lambda t: differential(t, **kw).verdict == "unsound")
    return out


def fuzz(n: int, seed: int = 0, max_statements: int = 20, **kw) -> list:
    return [differential_test(random_program(seed + i, max_statements), **kw) for i in range(n)]


def report_json(results: list) -> str:
    return json.dumps({"schema": "fsdroid.fuzz-report/1", "results": [r.as_dict() for r in results]}, indent=2,
                      sort_keys=True)


__all__ = ["beta_value", "beta_block", "beta_config", "beta_filter", "AbstractionOptions", "check_subsumed", "SubsumptionChecker", "SubsumptionVerdict",
           "random_program", "differential", "differential_test", "minimize", "fuzz", "report_json",
           "render_fact", "Program"]
