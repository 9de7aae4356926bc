"""Saturation of the clause system, reachability/taint derivation and leak queries.

Facts are hashable tuples.  Local-state facts carry their whole abstract
state; global facts (H, S, I, T) only ever hold flow-insensitive values.
Evaluation is event driven: a new fact re-runs the clauses it triggers, and
every dependency a clause read (H at a label, RHS at a pp, summaries of a
method) re-runs that clause on its trigger when it grows.
"""

from __future__ import annotations

import json
import re
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

from . import absdomain as ad
from .absdomain import AValue
from .clausegen import Atom, Cond, Const, Fn, HornClause, RuleSet, Var

COMPLETE, INCOMPLETE = "complete", "incomplete"


class LFact(NamedTuple):
    """LState (``pred == "L"``) or AState (``"A"``)."""

    pred: str
    pp: tuple
    ctx: tuple  # (thread/activity value, argument values)
    regs: tuple
    heap: tuple
    k: int


class SumFact(NamedTuple):
    """Res or Unc: what a method returns or throws for a calling context."""

    pred: str
    meth: tuple
    ctx: tuple
    value: AValue
    heap: tuple
    k: int


class RHSFact(NamedTuple):
    pred: str
    pp: tuple
    value: AValue


class GFact(NamedTuple):
    """H(label, block), S((cls, field), value), I(label, intent block), T(label, thread block)."""

    pred: str
    key: object
    payload: object


def fact_key(f) -> tuple:
    if f.pred in ("L", "A", "RHS"):
        return (f.pred, f.pp)
    if f.pred in ("Res", "Unc"):
        return (f.pred, f.meth)
    return (f.pred, f.key)


def _ctx_leq(a: tuple, b: tuple) -> bool:
    return a[0] == b[0] and len(a[1]) == len(b[1]) and all(ad.leq(x, y) for x, y in zip(a[1], b[1]))


def _blk_leq(a, b) -> bool:
    if a is None:
        return True
    return b is not None and ad.block_leq(a, b)


def fact_leq(f, g) -> bool:
    """Per-predicate fact order used for pruning (same predicate and key assumed)."""
    if f.pred in ("L", "A"):
        return (f.k == g.k and _ctx_leq(f.ctx, g.ctx) and all(ad.leq(x, y) for x, y in zip(f.regs, g.regs))
                and ad.heap_leq(f.heap, g.heap))
    if f.pred in ("Res", "Unc"):
        return f.k == g.k and _ctx_leq(f.ctx, g.ctx) and ad.leq(f.value, g.value) and ad.heap_leq(f.heap, g.heap)
    if f.pred == "RHS":
        return ad.leq(f.value, g.value)
    if f.pred == "S":
        return ad.leq_nfs(f.payload, g.payload)
    return ad.block_leq_nfs(f.payload, g.payload)


class FactBase:
    """Indexed fact store.  With ``prune`` only maximal facts per key are kept."""

    def __init__(self, prune: bool = False):
        self.prune = prune
        self._all: dict = {}
        self._by_key: dict = {}

    def add(self, f) -> bool:
        if f in self._all:
            return False
        key = fact_key(f)
        bucket = self._by_key.setdefault(key, [])
        if self.prune:
            if any(fact_leq(f, g) for g in bucket):
                return False
            dead = [g for g in bucket if fact_leq(g, f)]
            for g in dead:
                bucket.remove(g)
                del self._all[g]
        bucket.append(f)
        self._all[f] = None
        return True

    def get(self, pred: str, key) -> list:
        return self._by_key.get((pred, key), [])

    def __contains__(self, f) -> bool:
        return f in self._all

    def __iter__(self):
        return iter(list(self._all))

    def __len__(self) -> int:
        return len(self._all)

    def of_pred(self, pred: str) -> list:
        return [f for f in self._all if f.pred == pred]

    def as_set(self) -> frozenset:
        return frozenset(self._all)

    def counts(self) -> dict:
        out: dict = {}
        for f in self._all:
            out[f.pred] = out.get(f.pred, 0) + 1
        return dict(sorted(out.items()))


# ---------------------------------------------------------------------------
# reachability and taint


def derive_reach(v: AValue, h: tuple, sites: ad.SiteTable) -> int:
    """Filter of the flow-sensitive sites reachable from ``v`` through ``h``."""
    return derive_reach_iter(v, h, sites)[0]


def derive_reach_iter(v: AValue, h: tuple, sites: ad.SiteTable) -> tuple:
    """Kleene iteration of the reachability clauses; returns ``(filter, rounds)``.

    Every site named FS in ``v`` is reachable (even with an empty heap entry);
    each round adds the FS sites named inside the blocks already reached.
    """
    idx = sites.index
    k = 0
    for lab, fs in v.locs:
        if fs:
            k |= 1 << idx[lab]
    rounds = 0
    while True:
        nk = k
        for i in range(len(sites)):
            if (k >> i) & 1 and h[i] is not None:
                for u in h[i].vals:
                    for lab, fs in u.locs:
                        if fs:
                            nk |= 1 << idx[lab]
        rounds += 1
        if nk == k:
            return k, rounds
        k = nk


def taint_path(v: AValue, h: tuple, base: Optional[FactBase], sites: ad.SiteTable) -> list:
    """Locations visited until a secret value is met; empty if ``v`` is public everywhere."""
    if v.taint:
        return [("value", None)]
    seen = set()
    todo = deque((loc, [loc]) for loc in sorted(v.locs, key=lambda x: (ad.label_key(x[0]), x[1])))
    while todo:
        (lab, fs), path = todo.popleft()
        if (lab, fs) in seen:
            continue
        seen.add((lab, fs))
        if fs:
            i = sites.index.get(lab)
            blocks = [h[i]] if i is not None and h[i] is not None else []
        else:
            blocks = [g.payload for g in base.get("H", lab)] if base is not None else []
        for b in blocks:
            for u in b.vals:
                if u.taint:
                    return path
                for loc in sorted(u.locs, key=lambda x: (ad.label_key(x[0]), x[1])):
                    todo.append((loc, path + [loc]))
    return []


def derive_taint(v: AValue, h: tuple, base: Optional[FactBase], sites: ad.SiteTable) -> int:
    """Join of every taint reachable from ``v``: FS through ``h``, NFS through H facts."""
    return ad.SECRET if taint_path(v, h, base, sites) else ad.PUBLIC


# ---------------------------------------------------------------------------
# clause evaluators


def _trigger_key(cl: HornClause):
    k = cl.kind
    if k in ("builtin", "rhs-lit"):
        return None
    if k == "rhs-static":
        return ("S", tuple(cl.params))
    if k.startswith("abstate"):
        return ("A", cl.pp)
    if k in ("cbk", "fin", "thread-fin", "rep", "res"):
        return ("H",)
    if k in ("tstart", "thread-pending"):
        return ("T",)
    if k in ("act-intent", "act-obj", "thread-intent"):
        return ("I",)
    return ("L", cl.pp)


def _fact_trigger(f):
    if f.pred in ("L", "A"):
        return (f.pred, f.pp)
    if f.pred == "S":
        return ("S", f.key)
    if f.pred in ("H", "T", "I"):
        return (f.pred,)
    return None


def _fact_dep(f):
    if f.pred in ("H", "T"):
        return (f.pred, f.key)
    if f.pred == "RHS":
        return ("RHS", f.pp)
    if f.pred in ("Res", "Unc"):
        return (f.pred, f.meth)
    return None


def _set(t: tuple, i: int, v) -> tuple:
    return t[:i] + (v,) + t[i + 1:]


def _sorted_locs(v: AValue) -> list:
    return sorted(v.locs, key=lambda x: (ad.label_key(x[0]), x[1]))


ZERO = ad.zero_of("int")
TRUE_V = ad.beta_prim("bool", True)
FALSE_V = ad.beta_prim("bool", False)


@dataclass
class SaturationResult:
    base: FactBase
    status: str
    derivations: dict
    rounds: int = 0
    seconds: float = 0.0
    rules: Optional[RuleSet] = None


class Solver:
    def __init__(self, rs: RuleSet, prune: bool = False, max_facts: int = 200_000,
                 time_budget: Optional[float] = None, record: bool = True, max_steps: Optional[int] = None):
        self.rs = rs
        self.P = rs.program
        self.sites = rs.sites
        self.base = FactBase(prune)
        self.max_facts = max_facts
        self.time_budget = time_budget
        self.max_steps = max_steps
        self.steps = 0
        self.record = record
        self.derivs: dict = {}
        self.triggers: dict = {}
        for ci, cl in enumerate(rs.clauses):
            tk = _trigger_key(cl)
            if tk is not None:
                self.triggers.setdefault(tk, []).append(ci)
        self.deps: dict = {}
        self.status = COMPLETE
        self._start = 0.0

    # -- seeds ------------------------------------------------------------

    def seed_facts(self) -> list:
        out = []
        for cl in self.rs.clauses:
            if cl.kind == "rhs-lit":
                kind, value = cl.params
                out.append(RHSFact("RHS", cl.pp, ad.beta_prim(kind, value)))
        for c, f, t in self.P.static_fields():
            out.append(GFact("S", (c, f), ad.zero_of(t)))
        for c in self.rs.cfg.entry_activities:
            out.append(GFact("H", c, self.rs.default_obj(c)))
        return out

    # -- helpers used by evaluators -----------------------------------------

    def read(self, reads: Optional[set], pred: str, key) -> list:
        if reads is not None:
            reads.add((pred, key))
        return list(self.base.get(pred, key))

    def getblk(self, f: LFact, r: int, reads, mode: Optional[bool] = None):
        """``(label, fs, block, premise)`` for every block register ``r`` may point to."""
        for lab, fs in _sorted_locs(f.regs[r]):
            if mode is not None and fs != mode:
                continue
            if fs:
                i = self.sites.index.get(lab)
                b = f.heap[i] if i is not None else None
                if b is not None:
                    yield lab, True, b, None
            else:
                for g in self.read(reads, "H", lab):
                    yield lab, False, g.payload, g

    def reach(self, v: AValue, h: tuple) -> int:
        return derive_reach(v, h, self.sites)

    def lift_out(self, h: tuple, k: int) -> list:
        """H facts for every lifted site that holds a block."""
        out = []
        for i, pp in enumerate(self.sites.sites):
            if (k >> i) & 1 and h[i] is not None:
                out.append(GFact("H", pp, ad.lift_block(h[i], k, self.sites)))
        return out

    def lifted_next(self, f: LFact, k2: int, regs=None) -> LFact:
        regs = f.regs if regs is None else regs
        return f._replace(pp=(f.pp[0], f.pp[1], f.pp[2] + 1), regs=ad.lift_regs(regs, k2, self.sites),
                          heap=ad.lift_heap(f.heap, k2, self.sites), k=f.k | k2)

    @staticmethod
    def nxt(f: LFact, **kw) -> LFact:
        return f._replace(pp=(f.pp[0], f.pp[1], f.pp[2] + 1), **kw)

    def md(self, pp):
        return self.P.method_at(pp[0], pp[1])

    # -- running ------------------------------------------------------------

    def run_clause(self, ci: int, trig, reads: Optional[set]) -> list:
        cl = self.rs.clauses[ci]
        return EVALUATORS[cl.kind](self, cl, trig, reads)

    def _over_budget(self) -> bool:
        if len(self.base) > self.max_facts:
            return True
        if self.max_steps is not None and self.steps > self.max_steps:
            return True
        return self.time_budget is not None and time.monotonic() - self._start > self.time_budget

    def _commit(self, ci: int, trig, outs: list, queue: Optional[deque]) -> bool:
        grew = False
        for fact, prem in outs:
            if self.base.add(fact):
                grew = True
                if self.record and fact not in self.derivs:
                    self.derivs[fact] = (ci, (trig,) + tuple(p for p in prem if p is not None))
                if queue is not None:
                    queue.append(fact)
        return grew

    def saturate(self, mode: str = "semi-naive", workers: int = 4, extra_seeds: Iterable = ()) -> SaturationResult:
        self._start = time.monotonic()
        for f in list(self.seed_facts()) + list(extra_seeds):
            if self.base.add(f) and self.record:
                self.derivs[f] = (None, ())
        if mode == "semi-naive":
            rounds = self._semi_naive()
        elif mode == "naive":
            rounds = self._rounds(None)
        elif mode == "parallel":
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rounds = self._rounds(pool)
        else:
            raise ValueError(f"unknown evaluation mode {mode}")
        return SaturationResult(self.base, self.status, self.derivs, rounds, time.monotonic() - self._start, self.rs)

    def _semi_naive(self) -> int:
        queue = deque(self.base)
        steps = 0
        while queue:
            if self._over_budget():
                self.status = INCOMPLETE
                break
            f = queue.popleft()
            steps += 1
            self.steps = steps
            pairs = [(ci, f) for ci in self.triggers.get(_fact_trigger(f), ())]
            dk = _fact_dep(f)
            if dk is not None:
                pairs.extend(self.deps.get(dk, {}))
            for ci, trig in pairs:
                reads: set = set()
                outs = self.run_clause(ci, trig, reads)
                for key in reads:
                    self.deps.setdefault(key, {})[(ci, trig)] = None
                self._commit(ci, trig, outs, queue)
        return steps

    def _rounds(self, pool) -> int:
        """Full re-evaluation of every clause on every fact until nothing changes."""
        rounds = 0
        while True:
            rounds += 1
            self.steps = rounds
            snapshot = list(self.base)
            jobs = [(ci, f) for f in snapshot for ci in self.triggers.get(_fact_trigger(f), ())]
            if pool is None:
                results = [self.run_clause(ci, f, None) for ci, f in jobs]
            else:
                results = list(pool.map(lambda j: self.run_clause(j[0], j[1], None), jobs))
            grew = False
            for (ci, f), outs in zip(jobs, results):
                grew |= self._commit(ci, f, outs, None)
            if self._over_budget():
                self.status = INCOMPLETE
                break
            if not grew:
                break
        return rounds


# -- evaluators: each returns [(fact, premises)] ----------------------------


def _ev_rhs_reg(sv: Solver, cl, f, reads):
    return [(RHSFact("RHS", f.pp, f.regs[cl.params[0]]), ())]


def _ev_rhs_static(sv: Solver, cl, f, reads):
    return [(RHSFact("RHS", cl.pp, f.payload), ())]


def _ev_rhs_fld(sv: Solver, cl, f, reads):
    o, name, fs_mode = cl.params
    out = []
    for _lab, fs, b, prem in sv.getblk(f, o, reads, fs_mode):
        if b.kind == "obj" and b.has_field(name):
            u = b.field(name)
            out.append((RHSFact("RHS", f.pp, u if fs else ad.collapse(u)), (prem,)))
    return out


def _ev_rhs_arr(sv: Solver, cl, f, reads):
    a, fs_mode = cl.params
    out = []
    for _lab, fs, b, prem in sv.getblk(f, a, reads, fs_mode):
        if b.kind == "array":
            out.append((RHSFact("RHS", f.pp, b.content if fs else ad.collapse(b.content)), (prem,)))
    return out


def _rhs(sv: Solver, f, reads) -> list:
    return sv.read(reads, "RHS", f.pp)


def _ev_move_reg(sv: Solver, cl, f, reads):
    (d,) = cl.params
    return [(sv.nxt(f, regs=_set(f.regs, d, r.value)), (r,)) for r in _rhs(sv, f, reads)]


def _ev_move_fld_fs(sv: Solver, cl, f, reads):
    o, name, site = cl.params
    if (site, True) not in f.regs[o].locs:
        return []
    i = sv.sites.index[site]
    b = f.heap[i]
    if b is None or b.kind != "obj" or not b.has_field(name):
        return []
    return [(sv.nxt(f, heap=_set(f.heap, i, b.set_field(name, r.value))), (r,)) for r in _rhs(sv, f, reads)]


def _ev_move_fld_nfs(sv: Solver, cl, f, reads):
    o, name = cl.params
    out = []
    rhs = _rhs(sv, f, reads)
    if not rhs:
        return out
    for lab, _fs, b, prem in sv.getblk(f, o, reads, False):
        if b.kind != "obj" or not b.has_field(name):
            continue
        for r in rhs:
            k2 = sv.reach(r.value, f.heap)
            out.append((GFact("H", lab, b.set_field(name, ad.lift_value(r.value, k2, sv.sites))), (prem, r)))
            out.extend((g, (r,)) for g in sv.lift_out(f.heap, k2))
            out.append((sv.lifted_next(f, k2), (prem, r)))
    return out


def _ev_move_arr_fs(sv: Solver, cl, f, reads):
    (a,) = cl.params
    out = []
    rhs = _rhs(sv, f, reads)
    for lab, _fs, b, _p in sv.getblk(f, a, reads, True):
        if b.kind != "array":
            continue
        i = sv.sites.index[lab]
        for r in rhs:
            nb = b._replace(vals=(ad.join(b.content, r.value),))
            out.append((sv.nxt(f, heap=_set(f.heap, i, nb)), (r,)))
    return out


def _ev_move_arr_nfs(sv: Solver, cl, f, reads):
    (a,) = cl.params
    out = []
    rhs = _rhs(sv, f, reads)
    if not rhs:
        return out
    for lab, _fs, b, prem in sv.getblk(f, a, reads, False):
        if b.kind != "array":
            continue
        for r in rhs:
            k2 = sv.reach(r.value, f.heap)
            nb = b._replace(vals=(ad.join(b.content, ad.lift_value(r.value, k2, sv.sites)),))
            out.append((GFact("H", lab, nb), (prem, r)))
            out.extend((g, (r,)) for g in sv.lift_out(f.heap, k2))
            out.append((sv.lifted_next(f, k2), (prem, r)))
    return out


def _ev_move_static(sv: Solver, cl, f, reads):
    key = tuple(cl.params)
    out = []
    for r in _rhs(sv, f, reads):
        k2 = sv.reach(r.value, f.heap)
        out.append((GFact("S", key, ad.lift_value(r.value, k2, sv.sites)), (r,)))
        out.extend((g, (r,)) for g in sv.lift_out(f.heap, k2))
        out.append((sv.lifted_next(f, k2), (r,)))
    return out


def _ev_goto(sv: Solver, cl, f, reads):
    return [(f._replace(pp=(f.pp[0], f.pp[1], cl.params[0])), ())]


def _ev_if_true(sv: Solver, cl, f, reads):
    i, cmp, j, tgt = cl.params
    may_t, _ = ad.abs_comp(cmp, f.regs[i], f.regs[j])
    return [(f._replace(pp=(f.pp[0], f.pp[1], tgt)), ())] if may_t else []


def _ev_if_false(sv: Solver, cl, f, reads):
    i, cmp, j = cl.params
    _, may_f = ad.abs_comp(cmp, f.regs[i], f.regs[j])
    return [(sv.nxt(f), ())] if may_f else []


def _ev_binop(sv: Solver, cl, f, reads):
    d, op, i, j = cl.params
    return [(sv.nxt(f, regs=_set(f.regs, d, ad.abs_binop(op, f.regs[i], f.regs[j]))), ())]


def _ev_unop(sv: Solver, cl, f, reads):
    d, op, i = cl.params
    return [(sv.nxt(f, regs=_set(f.regs, d, ad.abs_unop(op, f.regs[i]))), ())]


def _ev_checkcast(sv: Solver, cl, f, reads):
    s, tau = cl.params
    for _lab, _fs, b, prem in sv.getblk(f, s, reads):
        if sv.P.subtype(ad.block_type(b), tau):
            return [(sv.nxt(f), (prem,))]
    return []


def _ev_instanceof(sv: Solver, cl, f, reads):
    d, s, tau, want = cl.params
    for _lab, _fs, b, prem in sv.getblk(f, s, reads):
        if sv.P.subtype(ad.block_type(b), tau) == want:
            return [(sv.nxt(f, regs=_set(f.regs, d, TRUE_V if want else FALSE_V)), (prem,))]
    return []


def _ev_alloc(sv: Solver, cl, f, reads):
    (d,) = cl.params
    pp = f.pp
    i = sv.sites.index[pp]
    k2 = sv.reach(ad.fs(pp), f.heap)
    out = [(g, ()) for g in sv.lift_out(f.heap, k2)]
    nf = sv.lifted_next(f, k2)
    nf = nf._replace(regs=_set(nf.regs, d, ad.fs(pp)), heap=_set(nf.heap, i, sv.rs.site_blocks[pp]))
    out.append((nf, ()))
    return out


def _ev_alloc_eager(sv: Solver, cl, f, reads):
    (d,) = cl.params
    return [(GFact("H", f.pp, sv.rs.site_blocks[f.pp]), ()),
            (sv.nxt(f, regs=_set(f.regs, d, ad.nfs(f.pp))), ())]


def _ev_start_act(sv: Solver, cl, f, reads):
    i, fs_mode = cl.params
    out = []
    owners = [lab for lab, _ in _sorted_locs(f.ctx[0])]
    for lab, _fs, b, prem in sv.getblk(f, i, reads, fs_mode):
        if b.kind != "intent":
            continue
        if fs_mode:
            k2 = sv.reach(ad.fs(lab), f.heap)
            sent = ad.lift_block(b, k2, sv.sites)
            out.extend((GFact("I", o, sent), ()) for o in owners)
            out.extend((g, ()) for g in sv.lift_out(f.heap, k2))
            out.append((sv.lifted_next(f, k2), ()))
        else:
            out.extend((GFact("I", o, b), (prem,)) for o in owners)
            out.append((sv.nxt(f), (prem,)))
    return out


def _ev_put_extra(sv: Solver, cl, f, reads):
    ri, rj, fs_mode = cl.params
    v = f.regs[rj]
    out = []
    for lab, _fs, b, prem in sv.getblk(f, ri, reads, fs_mode):
        if b.kind != "intent":
            continue
        if fs_mode:
            i = sv.sites.index[lab]
            out.append((sv.nxt(f, heap=_set(f.heap, i, b._replace(vals=(ad.join(b.content, v),)))), ()))
        else:
            k2 = sv.reach(v, f.heap)
            nb = b._replace(vals=(ad.join(b.content, ad.lift_value(v, k2, sv.sites)),))
            out.append((GFact("H", lab, nb), (prem,)))
            out.extend((g, ()) for g in sv.lift_out(f.heap, k2))
            out.append((sv.lifted_next(f, k2), (prem,)))
    return out


def _ev_get_extra(sv: Solver, cl, f, reads):
    (i,) = cl.params
    md = sv.md(f.pp)
    out = []
    for _lab, _fs, b, prem in sv.getblk(f, i, reads):
        # an intent that never received an extra has no key to find
        if b.kind == "intent" and b.content != ad.BOTTOM:
            out.append((sv.nxt(f, regs=_set(f.regs, md.ret_reg, b.content)), (prem,)))
    return out


def _ev_return(sv: Solver, cl, f, reads):
    (src,) = cl.params
    md = sv.md(f.pp)
    v = f.regs[md.ret_reg]
    if src and (v.sign or v.bool or v.str):
        v = ad.with_taint(v, ad.SECRET)
    return [(SumFact("Res", (f.pp[0], f.pp[1]), f.ctx, v, f.heap, f.k), ())]


def _receiver_ok(sv: Solver, f, o, tgt, reads):
    for _lab, _fs, b, prem in sv.getblk(f, o, reads):
        if b.kind == "obj" and sv.P.subtype(b.cls, tgt):
            return True, prem
    return False, None


def _call_prelude(sv: Solver, cl, f, reads):
    callers, tgt, name = cl.params
    if cl.kind.startswith("invoke"):
        ok, prem = _receiver_ok(sv, f, callers[0], tgt, reads)
        if not ok:
            return None
        return [f.regs[r] for r in callers], prem
    return [f.regs[r] for r in callers], None


def _ev_call(sv: Solver, cl, f, reads):
    pre = _call_prelude(sv, cl, f, reads)
    if pre is None:
        return []
    args, prem = pre
    _callers, tgt, name = cl.params
    callee = sv.P.method_at(tgt, name)
    regs = (ZERO,) * callee.locals + tuple(args) + (ZERO, ZERO)
    return [(LFact("L", (tgt, name, 0), (f.ctx[0], tuple(args)), regs, f.heap, 0), (prem,))]


def _ctx_match(ctx: tuple, args: list, res_ctx: tuple) -> bool:
    if ctx[0] != res_ctx[0] or len(args) != len(res_ctx[1]):
        return False
    return all(ad.overlaps(a, w) or a == w for a, w in zip(args, res_ctx[1]))


def _ev_result(sv: Solver, cl, f, reads):
    pre = _call_prelude(sv, cl, f, reads)
    if pre is None:
        return []
    args, prem = pre
    _callers, tgt, name = cl.params
    md = sv.md(f.pp)
    abnormal = cl.kind.endswith("uncaught")
    out = []
    for r in sv.read(reads, "Unc" if abnormal else "Res", (tgt, name)):
        if not _ctx_match(f.ctx, args, r.ctx):
            continue
        regs = ad.lift_regs(f.regs, r.k, sv.sites)
        if abnormal:
            nf = f._replace(pred="A", regs=_set(regs, md.excpt_reg, r.value), heap=r.heap, k=f.k | r.k)
        else:
            nf = sv.nxt(f, regs=_set(regs, md.ret_reg, r.value), heap=r.heap, k=f.k | r.k)
        out.append((nf, (prem, r)))
    return out


def _ev_throw(sv: Solver, cl, f, reads):
    md = sv.md(f.pp)
    return [(f._replace(pred="A", regs=_set(f.regs, md.excpt_reg, f.regs[cl.params[0]])), ())]


def _ev_move_exception(sv: Solver, cl, f, reads):
    md = sv.md(f.pp)
    return [(sv.nxt(f, regs=_set(f.regs, cl.params[0], f.regs[md.excpt_reg])), ())]


def _ev_start_thread(sv: Solver, cl, f, reads):
    i, fs_mode = cl.params
    out = []
    for lab, _fs, b, prem in sv.getblk(f, i, reads, fs_mode):
        if b.kind != "obj" or not sv.P.is_thread(b.cls):
            continue
        if fs_mode:
            k2 = sv.reach(ad.fs(lab), f.heap)
            out.append((GFact("T", lab, ad.lift_block(b, k2, sv.sites)), ()))
            out.extend((g, ()) for g in sv.lift_out(f.heap, k2))
            out.append((sv.lifted_next(f, k2), ()))
        else:
            out.append((GFact("T", lab, b), (prem,)))
            out.append((sv.nxt(f), (prem,)))
    return out


def _ev_interrupt(sv: Solver, cl, f, reads):
    i, fs_mode = cl.params
    setting = cl.kind == "interrupt"
    md = sv.md(f.pp)
    out = []
    for lab, _fs, b, prem in sv.getblk(f, i, reads, fs_mode):
        if b.kind != "obj" or not b.has_field("inte"):
            continue
        nb = b.set_field("inte", TRUE_V if setting else FALSE_V)
        regs = f.regs if setting else _set(f.regs, md.ret_reg, b.field("inte"))
        if fs_mode:
            out.append((sv.nxt(f, regs=regs, heap=_set(f.heap, sv.sites.index[lab], nb)), ()))
        else:
            out.append((GFact("H", lab, nb), (prem,)))
            out.append((sv.nxt(f, regs=regs), (prem,)))
    return out


def _ev_is_interrupted(sv: Solver, cl, f, reads):
    md = sv.md(f.pp)
    out = []
    for _lab, _fs, b, prem in sv.getblk(f, cl.params[0], reads):
        if b.kind == "obj" and b.has_field("inte"):
            out.append((sv.nxt(f, regs=_set(f.regs, md.ret_reg, b.field("inte"))), (prem,)))
    return out


def _owner_blocks(sv: Solver, f, reads):
    for lab, fs in _sorted_locs(f.ctx[0]):
        for g in sv.read(reads, "H", lab):
            if g.payload.kind == "obj" and g.payload.has_field("inte"):
                yield lab, g


def _ev_thread_ok(sv: Solver, cl, f, reads):
    for _lab, g in _owner_blocks(sv, f, reads):
        if g.payload.field("inte").bool & ad.B_FF:
            return [(sv.nxt(f), (g,))]
    return []


def _ev_thread_int(sv: Solver, cl, f, reads):
    md = sv.md(f.pp)
    out = []
    for lab, g in _owner_blocks(sv, f, reads):
        if not g.payload.field("inte").bool & ad.B_TT:
            continue
        out.append((GFact("H", f.pp, sv.rs.default_obj("IntExcpt")), (g,)))
        out.append((f._replace(pred="A", regs=_set(f.regs, md.excpt_reg, ad.nfs(f.pp))), (g,)))
        out.append((GFact("H", lab, g.payload.set_field("inte", FALSE_V)), (g,)))
    return out


def _ev_skip(sv: Solver, cl, f, reads):
    return [(sv.nxt(f), ())]


def _ev_abstate(sv: Solver, cl, f, reads):
    md = sv.md(f.pp)
    caught = cl.kind == "abstate-caught"
    out = []
    for _lab, _fs, b, prem in sv.getblk(f, md.excpt_reg, reads):
        if b.kind != "obj" or not sv.P.is_subclass(b.cls, "Throwable"):
            continue
        handler = sv.P.excpt_handler(f.pp, b.cls)
        if caught and handler is not None:
            out.append((f._replace(pred="L", pp=(f.pp[0], f.pp[1], handler)), (prem,)))
        elif not caught and handler is None:
            out.append((SumFact("Unc", (f.pp[0], f.pp[1]), f.ctx, f.regs[md.excpt_reg], f.heap, f.k), (prem,)))
    return out


# global rules


def _is_act_label(sv: Solver, lab) -> bool:
    return isinstance(lab, str) and sv.P.is_activity(lab)


def _ev_cbk(sv: Solver, cl, f, reads):
    cls, m = cl.params
    lab, b = f.key, f.payload
    if not _is_act_label(sv, lab) or b.kind != "obj" or not sv.P.is_subclass(lab, cls):
        return []
    md = sv.P.method_at(cls, m)
    me = ad.nfs(lab)
    tops = tuple(sv.rs.top_value(t) for t in md.arg_types)
    regs = (ZERO,) * md.locals + (me,) + tops + (ZERO, ZERO)
    return [(LFact("L", (cls, m, 0), (me, (me,) + tops), regs, sv.sites.empty_heap(), 0), ())]


def _ev_tstart(sv: Solver, cl, f, reads):
    (cls,) = cl.params
    b = f.payload
    if b.kind != "obj" or not sv.P.is_subclass(b.cls, cls):
        return []
    md = sv.P.method_at(cls, "run")
    me = ad.nfs(f.key)
    regs = (ZERO,) * md.locals + (me, ZERO, ZERO)
    return [(LFact("L", (cls, "run", 0), (me, (me,)), regs, sv.sites.empty_heap(), 0), ())]


_TOP_BOOL = ad.AValue(frozenset(), ad.S_BOT, ad.B_TOP, 0, ad.PUBLIC)


def _ev_fin(sv: Solver, cl, f, reads):
    b = f.payload
    if not _is_act_label(sv, f.key) or b.kind != "obj" or not b.has_field("finished"):
        return []
    return [(GFact("H", f.key, b.set_field("finished", _TOP_BOOL)), ())]


def _ev_thread_fin(sv: Solver, cl, f, reads):
    b = f.payload
    if b.kind != "obj" or not sv.P.is_thread(b.cls) or not b.has_field("finished"):
        return []
    return [(GFact("H", f.key, b.set_field("finished", _TOP_BOOL)), ())]


def _ev_rep(sv: Solver, cl, f, reads):
    if not _is_act_label(sv, f.key) or f.payload.kind != "obj":
        return []
    return [(GFact("H", f.key, sv.rs.default_obj(f.key)), ())]


def _ev_res(sv: Solver, cl, f, reads):
    b = f.payload
    if b.kind != "obj" or not (b.has_field("parent") and b.has_field("result")):
        return []
    w = b.field("result")
    out = []
    for plab, _fs in _sorted_locs(b.field("parent")):
        if not isinstance(plab, str):
            continue
        for g in sv.read(reads, "H", plab):
            if g.payload.kind == "obj" and g.payload.has_field("result"):
                out.append((GFact("H", plab, g.payload.set_field("result", w)), (g,)))
    return out


def _ev_act_intent(sv: Solver, cl, f, reads):
    b = f.payload
    if b.kind != "intent" or not sv.P.is_activity(b.cls):
        return []
    return [(GFact("H", ("in", b.cls), b), ())]


def _ev_act_obj(sv: Solver, cl, f, reads):
    b = f.payload
    if b.kind != "intent" or not sv.P.is_activity(b.cls) or not _is_act_label(sv, f.key):
        return []
    o = sv.rs.default_obj(b.cls)
    o = o.set_field("finished", FALSE_V).set_field("parent", ad.nfs(f.key)).set_field("intent", ad.nfs(("in", b.cls)))
    return [(GFact("H", b.cls, o), ())]


def _ev_thread_intent(sv: Solver, cl, f, reads):
    if _is_act_label(sv, f.key):
        return []
    return [(GFact("I", a, f.payload), ()) for a in sv.P.activity_classes()]


def _ev_thread_pending(sv: Solver, cl, f, reads):
    return [(GFact("T", f.key, g.payload), (g,)) for g in sv.read(reads, "H", f.key)
            if g.payload.kind == "obj"]


EVALUATORS = {
    "rhs-reg": _ev_rhs_reg, "rhs-static": _ev_rhs_static, "rhs-fld": _ev_rhs_fld, "rhs-arr": _ev_rhs_arr,
    "move-reg": _ev_move_reg, "move-fld-fs": _ev_move_fld_fs, "move-fld-nfs": _ev_move_fld_nfs,
    "move-arr-fs": _ev_move_arr_fs, "move-arr-nfs": _ev_move_arr_nfs, "move-static": _ev_move_static,
    "goto": _ev_goto, "if-true": _ev_if_true, "if-false": _ev_if_false, "binop": _ev_binop, "unop": _ev_unop,
    "checkcast": _ev_checkcast, "instanceof": _ev_instanceof, "alloc": _ev_alloc, "alloc-eager": _ev_alloc_eager,
    "start-act": _ev_start_act, "put-extra": _ev_put_extra, "get-extra": _ev_get_extra, "return": _ev_return,
    "invoke-call": _ev_call, "sinvoke-call": _ev_call, "invoke-result": _ev_result, "sinvoke-result": _ev_result,
    "invoke-uncaught": _ev_result, "sinvoke-uncaught": _ev_result, "throw": _ev_throw,
    "move-exception": _ev_move_exception, "start-thread": _ev_start_thread, "interrupt": _ev_interrupt,
    "interrupted": _ev_interrupt, "is-interrupted": _ev_is_interrupted, "thread-ok": _ev_thread_ok,
    "thread-int": _ev_thread_int, "skip": _ev_skip, "abstate-caught": _ev_abstate, "abstate-uncaught": _ev_abstate,
    "cbk": _ev_cbk, "tstart": _ev_tstart, "fin": _ev_fin, "thread-fin": _ev_thread_fin, "rep": _ev_rep,
    "res": _ev_res, "act-intent": _ev_act_intent, "act-obj": _ev_act_obj, "thread-intent": _ev_thread_intent,
    "thread-pending": _ev_thread_pending,
}


def saturate(rs: RuleSet, mode: str = "semi-naive", prune: bool = False, max_facts: int = 200_000,
             time_budget: Optional[float] = None, record: bool = True, workers: int = 4,
             max_steps: Optional[int] = None, extra_seeds: Iterable = ()) -> SaturationResult:
    """Least fixpoint of ``rs`` from its seeds.  ``max_steps`` counts worklist pops (rounds in naive/parallel)."""
    return Solver(rs, prune, max_facts, time_budget, record, max_steps).saturate(mode, workers, extra_seeds)


# ---------------------------------------------------------------------------
# leak queries


@dataclass
class Leak:
    sink: tuple
    arg_index: int
    register: int
    fact: LFact
    path: list = field(default_factory=list)


@dataclass
class LeakReport:
    leaks: list
    status: str = COMPLETE

    @property
    def verdict(self) -> str:
        if self.leaks:
            return "leak"
        return "no-leak" if self.status == COMPLETE else "inconclusive"

    def as_dict(self) -> dict:
        return {
            "schema": "fsdroid.leak-report/1",
            "status": self.status,
            "verdict": self.verdict,
            "leaks": [{"sink": f"{lk.sink[0]}.{lk.sink[1]}", "argument": lk.arg_index, "register": f"r{lk.register}",
                       "context": ad.render_value(lk.fact.ctx[0]),
                       "path": [("FS(" if fs else "NFS(") + ad.render_label(lab) + ")" for lab, fs in lk.path
                                if lab != "value"]}
                      for lk in self.leaks],
        }


def query_leak(res: SaturationResult, cfg=None) -> LeakReport:
    """One entry per (sink, argument) whose entry state may carry a secret."""
    rs = res.rules
    cfg = cfg or rs.cfg
    base = res.base
    found: dict = {}
    for sink in sorted(cfg.sinks):
        c, m = sink
        if c not in rs.program.class_map or rs.program.class_map[c].method(m) is None:
            continue
        md = rs.program.method_at(c, m)
        first = md.locals + (0 if md.static else 1)
        for f in base.get("L", (c, m, 0)):
            for j, r in enumerate(range(first, md.nregs)):
                if (sink, j) in found:
                    continue
                path = taint_path(f.regs[r], f.heap, base, rs.sites)
                if path:
                    found[(sink, j)] = Leak(sink, j, r, f, [p for p in path if p[0] != "value"])
    return LeakReport([found[k] for k in sorted(found)], res.status)


# ---------------------------------------------------------------------------
# rendering and explanation


def render_ctx(ctx: tuple) -> str:
    return "(" + ", ".join([ad.render_value(ctx[0])] + [ad.render_value(v) for v in ctx[1]]) + ")"


def render_fact(f, sites: ad.SiteTable) -> str:
    if f.pred in ("L", "A"):
        name = "LState" if f.pred == "L" else "AState"
        regs = ", ".join(ad.render_value(v) for v in f.regs)
        return (f"{name}⟨{ad.render_label(f.pp)}⟩({render_ctx(f.ctx)}; [{regs}]; "
                f"{ad.render_heap(f.heap, sites)}; {ad.render_filter(f.k, sites)})")
    if f.pred in ("Res", "Unc"):
        name = "Res" if f.pred == "Res" else "Uncaught"
        return (f"{name}⟨{f.meth[0]}.{f.meth[1]}⟩({render_ctx(f.ctx)}; {ad.render_value(f.value)}; "
                f"{ad.render_heap(f.heap, sites)}; {ad.render_filter(f.k, sites)})")
    if f.pred == "RHS":
        return f"RHS⟨{ad.render_label(f.pp)}⟩({ad.render_value(f.value)})"
    if f.pred == "S":
        return f"S({f.key[0]}.{f.key[1]}, {ad.render_value(f.payload)})"
    return f"{f.pred}({ad.render_label(f.key)}, {ad.render_block(f.payload)})"


def derivation_of(res: SaturationResult, fact) -> list:
    """Facts of the recorded derivation DAG below ``fact``, premises first."""
    order, seen = [], set()
    stack = [(fact, False)]
    while stack:
        f, done = stack.pop()
        if done:
            order.append(f)
            continue
        if f in seen:
            continue
        seen.add(f)
        stack.append((f, True))
        _ci, prem = res.derivations.get(f, (None, ()))
        for p in reversed(prem):
            if p not in seen:
                stack.append((p, False))
    return order


def aliasing_facts(res: SaturationResult, facts: Iterable) -> list:
    """H facts where two fields share a summary location that some fact in ``facts`` shows holding a secret."""
    hot = set()
    for f in facts:
        if f.pred == "H" and any(u.taint for u in f.payload.vals):
            hot.add(f.key)
    out = []
    for g in res.base.of_pred("H"):
        if g.payload.kind != "obj":
            continue
        for lab in sorted(hot, key=ad.label_key):
            holders = [n for n, u in zip(g.payload.names, g.payload.vals) if (lab, False) in u.locs]
            if len(holders) > 1:
                out.append(g)
                break
    return out


def explain(res: SaturationResult, leak: Leak) -> str:
    rs = res.rules
    lines = [f"leak at {leak.sink[0]}.{leak.sink[1]} argument {leak.arg_index} (r{leak.register})"]
    facts = derivation_of(res, leak.fact)
    for path_lab, fs in leak.path:
        if not fs:
            facts.extend(g for g in res.base.get("H", path_lab) if any(u.taint for u in g.payload.vals))
    for f in facts:
        ci, _prem = res.derivations.get(f, (None, ()))
        rule = "seed" if ci is None else rs.clauses[ci].rule
        lines.append(f"  [{rule}] {render_fact(f, rs.sites)}")
    aliases = aliasing_facts(res, facts)
    if aliases:
        lines.append("aliasing heap facts:")
        lines.extend(f"  {render_fact(g, rs.sites)}" for g in aliases)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# CHC text


_PRED_NAMES = {"LState", "AState", "Res", "Uncaught", "RHS", "H", "S", "I", "T", "GetBlk", "Reach", "Lift"}


def _q(name: str) -> str:
    return "|" + name.replace("%", "%25").replace("|", "%7C").replace("\\", "%5C") + "|"


def _unq(sym: str) -> str:
    return sym.replace("%7C", "|").replace("%5C", "\\").replace("%25", "%")


class _Emitter:
    def __init__(self):
        self.decls: dict = {}

    def declare(self, sym: str, arity: int, ret: str) -> None:
        self.decls.setdefault(sym, (arity, ret))

    def term(self, t, wild: list) -> str:
        if isinstance(t, Var):
            if t.name == "_":
                wild.append(f"_{len(wild)}")
                return _q(wild[-1])
            return _q(t.name)
        if isinstance(t, Const):
            sym = "'" + t.value
            self.declare(sym, 0, "D")
            return _q(sym)
        sym = f"{t.name}/{len(t.args)}"
        self.declare(sym, len(t.args), "D")
        if not t.args:
            return _q(sym)
        return "(" + _q(sym) + " " + " ".join(self.term(a, wild) for a in t.args) + ")"

    def atom(self, a, wild: list) -> str:
        if isinstance(a, Cond):
            sym = "?" + a.op
            self.declare(sym, len(a.args), "Bool")
        else:
            sym = a.pred + json.dumps(list(a.index), separators=(",", ":"))
            self.declare(sym, len(a.args), "Bool")
        if not a.args:
            return _q(sym)
        return "(" + _q(sym) + " " + " ".join(self.term(x, wild) for x in a.args) + ")"


def _vars_of(cl: HornClause) -> list:
    from .clausegen import term_vars
    names: set = set()
    for a in cl.body + cl.head:
        term_vars(a, names)
    names.discard("_")
    return sorted(names)


def emit_chc(rs_or_clauses) -> str:
    """Constrained Horn clauses over a single sort; every clause is named and tagged."""
    clauses = rs_or_clauses.clauses if isinstance(rs_or_clauses, RuleSet) else list(rs_or_clauses)
    em = _Emitter()
    body_lines = []
    for n, cl in enumerate(clauses):
        wild: list = []
        body = [em.atom(a, wild) for a in cl.body]
        head = [em.atom(a, wild) for a in cl.head]
        names = _vars_of(cl) + wild
        b = "true" if not body else (body[0] if len(body) == 1 else "(and " + " ".join(body) + ")")
        h = head[0] if len(head) == 1 else "(and " + " ".join(head) + ")"
        imp = f"(=> {b} {h})"
        if names:
            imp = "(forall (" + " ".join(f"({_q(v)} D)" for v in names) + ") " + imp + ")"
        pp = json.dumps(list(cl.pp) if cl.pp is not None else None, separators=(",", ":"))
        body_lines.append(f"(assert (! {imp} :named c{n} :rule {_q(cl.rule)} :pp {_q(pp)}))")
    head = ["; constrained Horn clauses, one uninterpreted sort", "(set-logic HORN)", "(declare-sort D 0)"]
    for sym in sorted(em.decls):
        arity, ret = em.decls[sym]
        head.append(f"(declare-fun {_q(sym)} ({' '.join(['D'] * arity)}) {ret})")
    return "\n".join(head + body_lines) + "\n"


_TOKEN = re.compile(r"\s*(?:(;[^\n]*)|(\()|(\))|(\|[^|]*\|)|([^\s()|]+))")


def _sexprs(text: str) -> list:
    stack: list = [[]]
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip():
                raise ValueError(f"bad CHC text at offset {pos}")
            break
        pos = m.end()
        if m.group(1):
            continue
        if m.group(2):
            stack.append([])
        elif m.group(3):
            done = stack.pop()
            stack[-1].append(done)
        elif m.group(4):
            stack[-1].append(("sym", _unq(m.group(4)[1:-1])))
        else:
            stack[-1].append(("sym", m.group(5)))
    if len(stack) != 1:
        raise ValueError("unbalanced parentheses in CHC text")
    return stack[0]


def _parse_term(x, bound: set):
    if isinstance(x, tuple):
        name = x[1]
        if name in bound:
            return Var("_" if re.fullmatch(r"_\d+", name) else name)
        if name.startswith("'"):
            return Const(name[1:])
        fname, _, _n = name.rpartition("/")
        return Fn(fname, ())
    fname = x[0][1].rpartition("/")[0]
    return Fn(fname, tuple(_parse_term(a, bound) for a in x[1:]))


def _parse_atom(x, bound: set):
    sym = x[1] if isinstance(x, tuple) else x[0][1]
    args = () if isinstance(x, tuple) else tuple(_parse_term(a, bound) for a in x[1:])
    if sym.startswith("?"):
        return Cond(sym[1:], args)
    i = sym.index("[")
    index = tuple(json.loads(sym[i:]))
    return Atom(sym[:i], index, args)


def _conj(x, bound: set) -> tuple:
    if isinstance(x, tuple) and x[1] == "true":
        return ()
    if isinstance(x, list) and isinstance(x[0], tuple) and x[0][1] == "and":
        return tuple(_parse_atom(a, bound) for a in x[1:])
    return (_parse_atom(x, bound),)


def parse_chc(text: str) -> list:
    """Inverse of :func:`emit_chc` on the emitted subset: returns clauses (without evaluator kinds)."""
    out = []
    for top in _sexprs(text):
        if not isinstance(top, list) or top[0] != ("sym", "assert"):
            continue
        named = top[1]
        attrs = {named[i][1]: named[i + 1][1] for i in range(2, len(named) - 1, 2)}
        body = named[1]
        bound: set = set()
        if isinstance(body, list) and body[0] == ("sym", "forall"):
            bound = {v[0][1] for v in body[1]}
            body = body[2]
        _arrow, lhs, rhs = body
        pp = json.loads(attrs[":pp"])
        out.append(HornClause(_conj(lhs, bound), _conj(rhs, bound), attrs[":rule"],
                              tuple(pp) if pp is not None else None))
    return out


def analyze(program, cfg, model=None, flow_insensitive: bool = False, **kw) -> tuple:
    """Translate, saturate and query in one go: ``(rules, result, report)``."""
    from .clausegen import translate

    from .frontend import default_entries

    cfg = default_entries(program, cfg)
    rs = translate(program, cfg, model, flow_insensitive=flow_insensitive)
    res = saturate(rs, **kw)
    return rs, res, query_leak(res)
