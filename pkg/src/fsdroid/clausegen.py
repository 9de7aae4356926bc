"""Translation of a program into Horn clauses over abstract facts.

Each clause carries two views of itself:

* a symbolic body/head (atoms, side conditions, terms) used by the
  pretty-printer and the CHC exporter;
* an evaluator ``kind`` with ground ``params`` that the solver dispatches on.

The symbolic view is what round-trips through CHC text; ``kind``/``params``
are execution metadata and do not take part in clause equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Union

from . import absdomain as ad
from .concrete import LifecycleModel
from .frontend import (AnalysisConfig, ArrCell, FieldRef, Lit, MethodDef, Program, Reg, Statement, StaticRef,
                       is_reference_type)


# ---------------------------------------------------------------------------
# terms


class Var(NamedTuple):
    name: str


class Const(NamedTuple):
    value: str


class Fn(NamedTuple):
    name: str
    args: tuple


Term = Union[Var, Const, Fn]


class Atom(NamedTuple):
    pred: str
    index: tuple  # ground indices: program point, (cls, method), register number...
    args: tuple


class Cond(NamedTuple):
    op: str  # "<=", "not<=", "=", "meet", "leq", "cmp", "ncmp", "notexc", "exc"
    args: tuple


def pp_term(pp) -> Fn:
    c, m, pc = pp
    return Fn("pp", (Const(c), Const(m), Const(str(pc))))


def label_term(lab) -> Term:
    if isinstance(lab, tuple) and len(lab) == 3:
        return pp_term(lab)
    if isinstance(lab, tuple):
        return Fn("in", (Const(lab[1]),))
    return Const(lab)


def term_vars(t, out: set) -> set:
    if isinstance(t, Var):
        out.add(t.name)
    elif isinstance(t, Fn):
        for a in t.args:
            term_vars(a, out)
    elif isinstance(t, (Atom, Cond)):
        for a in t.args:
            term_vars(a, out)
    return out


@dataclass(frozen=True)
class HornClause:
    body: tuple
    head: tuple
    rule: str
    pp: Optional[tuple]
    kind: str = field(default="", compare=False)
    params: tuple = field(default=(), compare=False)

    def __post_init__(self):
        bound: set = set()
        for b in self.body:
            term_vars(b, bound)
        free: set = set()
        for h in self.head:
            term_vars(h, free)
        missing = free - bound - {"_"}
        if missing:
            raise ValueError(f"{self.rule}@{self.pp}: head variables {sorted(missing)} not bound in body")

    def structure(self) -> tuple:
        return (self.body, self.head, self.rule, self.pp)


# ---------------------------------------------------------------------------
# symbolic helpers

V_REGS, V_H, V_K, V_K2, V_CTX = Var("v*"), Var("h"), Var("k"), Var("k'"), Var("ctx")
V_LT, V_LT2 = Var("lt"), Var("lt'")
ANY = Var("_")


def _ls(pp, regs=V_REGS, h=V_H, k=V_K, ctx=V_CTX, pred="LState") -> Atom:
    return Atom(pred, tuple(pp), (ctx, regs, h, k))


def _upd(regs, r: str, val) -> Fn:
    return Fn("upd", (regs, Const(r), val))


def _reg(r: str) -> Fn:
    return Fn("at", (V_REGS, Const(r)))


def _lift(x, k=V_K2) -> Fn:
    return Fn("lift", (x, k))


def _lhlift(h=V_H, k=V_K2) -> Fn:
    return Fn("lhlift", (h, k))


def _kjoin(a=V_K, b=V_K2) -> Fn:
    return Fn("kjoin", (a, b))


def _getblk(i: str, loc, blk, regs=V_REGS, h=V_H) -> Atom:
    return Atom("GetBlk", (i,), (regs, h, loc, blk))


def _obj(cls, *fields) -> Fn:
    return Fn("obj", (cls,) + tuple(Fn("fld", (Const(f), v)) for f, v in fields))


def _reach(v, h=V_H, k=V_K2) -> Atom:
    return Atom("Reach", (), (v, h, k))


def _liftatom(h=V_H, k=V_K2) -> Atom:
    return Atom("Lift", (), (h, k))


def _ctx(lt, args) -> Fn:
    return Fn("ctx", (lt,) + tuple(args))


# ---------------------------------------------------------------------------
# the rule set


@dataclass
class RuleSet:
    program: Program
    cfg: AnalysisConfig
    model: LifecycleModel
    sites: ad.SiteTable
    clauses: list
    flow_insensitive: bool = False
    site_blocks: dict = field(default_factory=dict)  # site -> default abstract block
    labels: tuple = ()  # every abstract label: sites, activity classes, in(c)

    def top_value(self, t: str) -> ad.AValue:
        """⊤ for type ``t``; reference types get every compatible summary location plus null."""
        if t in ("int", "bool", "String"):
            return ad.AValue(frozenset(), ad.S_TOP if t == "int" else ad.S_BOT,
                             ad.B_TOP if t == "bool" else ad.B_BOT, 1 if t == "String" else 0, ad.SECRET)
        locs = frozenset((lab, False) for lab in self.labels if self.program.subtype(self.label_type(lab), t))
        return ad.AValue(locs, ad.S_ZERO, ad.B_BOT, 0, ad.SECRET)

    def label_type(self, lab) -> str:
        if isinstance(lab, tuple) and len(lab) == 3:
            if lab not in self.site_blocks:
                return "IntExcpt"  # interrupt exceptions are labelled by the join/wait point
            return ad.block_type(self.site_blocks[lab])
        if isinstance(lab, tuple):
            return "Intent"
        return lab

    def default_obj(self, cls: str) -> ad.ABlock:
        return ad.abs_obj(cls, [(f, ad.zero_of(t)) for f, t in self.program.all_fields(cls)])

    def by_kind(self, kind: str) -> list:
        return [c for c in self.clauses if c.kind == kind]


def build_sites(program: Program) -> tuple:
    sites, blocks = [], {}
    for pp in program.sites:
        st = program.statement(pp)
        sites.append(pp)
        if st.op == "new":
            cls = st.args[1]
            blocks[pp] = ad.abs_obj(cls, [(f, ad.zero_of(t)) for f, t in program.all_fields(cls)]) \
                if cls in program.class_map else ad.abs_obj(cls, [])
        elif st.op == "newarray":
            blocks[pp] = ad.abs_array(st.args[2], ad.zero_of(st.args[2]))
        else:
            blocks[pp] = ad.abs_intent(st.args[1], ad.BOTTOM)
    return ad.SiteTable(sites), blocks


def translate(program: Program, cfg: AnalysisConfig, model: Optional[LifecycleModel] = None,
              flow_insensitive: bool = False) -> RuleSet:
    """Translate the whole program: statements, abnormal-state rules, global and heap-access rules."""
    model = model or LifecycleModel()
    sites, blocks = build_sites(program)
    labels = list(sites.sites)
    labels += [c.name for c in program.classes if program.is_activity(c.name)]
    labels += [("in", c.name) for c in program.classes if program.is_activity(c.name)]
    labels += [pp for pp, st in program.statements() if st.op in ("join", "wait")]
    rs = RuleSet(program, cfg, model, sites, [], flow_insensitive, blocks, tuple(labels))
    for pp, st in program.statements():
        md = program.method_at(pp[0], pp[1])
        rs.clauses.extend(translate_statement(pp, st, rs, md))
        if st.op in ("throw", "invoke", "sinvoke", "join", "wait"):
            rs.clauses.extend(abstate_rules(pp, md))
    rs.clauses.extend(global_rules(program, model, rs))
    rs.clauses.extend(heap_access_rules())
    return rs


# ---------------------------------------------------------------------------
# right-hand sides


def translate_rhs(pp, rhs, rs: Optional[RuleSet] = None) -> list:
    out = []
    rhs_atom = lambda v: Atom("RHS", tuple(pp), (v,))  # noqa: E731
    if isinstance(rhs, Lit):
        out.append(HornClause((), (rhs_atom(Fn("prim", (Const(rhs.kind), Const(repr(rhs.value))))),), "rhs-prim", pp,
                              "rhs-lit", (rhs.kind, rhs.value)))
    elif isinstance(rhs, Reg):
        out.append(HornClause((_ls(pp),), (rhs_atom(_reg(f"r{rhs.index}")),), "rhs-reg", pp, "rhs-reg", (rhs.index,)))
    elif isinstance(rhs, StaticRef):
        v = Var("v")
        out.append(HornClause((Atom("S", (rhs.cls, rhs.name), (v,)),), (rhs_atom(_lift(v, Const("1*"))),),
                              "rhs-static", pp, "rhs-static", (rhs.cls, rhs.name)))
    elif isinstance(rhs, FieldRef):
        u, lam = Var("u"), Var("λ")
        blk = _obj(Var("c"), (rhs.name, u))
        out.append(HornClause((_ls(pp), _getblk(f"r{rhs.obj}", Fn("NFS", (lam,)), blk)),
                              (rhs_atom(_lift(u, Const("1*"))),), "rhs-fld-nfs", pp, "rhs-fld", (rhs.obj, rhs.name, False)))
        out.append(HornClause((_ls(pp), _getblk(f"r{rhs.obj}", Fn("FS", (lam,)), blk)),
                              (rhs_atom(u),), "rhs-fld-fs", pp, "rhs-fld", (rhs.obj, rhs.name, True)))
    elif isinstance(rhs, ArrCell):
        u, lam = Var("u"), Var("λ")
        blk = Fn("array", (Var("τ"), u))
        out.append(HornClause((_ls(pp), _getblk(f"r{rhs.array}", Fn("NFS", (lam,)), blk)),
                              (rhs_atom(_lift(u, Const("1*"))),), "rhs-arr-nfs", pp, "rhs-arr", (rhs.array, False)))
        out.append(HornClause((_ls(pp), _getblk(f"r{rhs.array}", Fn("FS", (lam,)), blk)),
                              (rhs_atom(u),), "rhs-arr-fs", pp, "rhs-arr", (rhs.array, True)))
    else:
        raise TypeError(rhs)
    return out


# ---------------------------------------------------------------------------
# statements


def _nxt(pp) -> tuple:
    return (pp[0], pp[1], pp[2] + 1)


def _lifting_heads(pp, regs=V_REGS) -> tuple:
    """``Lift(h,k') ∧ LState⟨pc+1⟩(lift(v*,k'); lhlift(h,k'); k ⊔ k')``."""
    return (_liftatom(), _ls(_nxt(pp), _lift(regs), _lhlift(), _kjoin()))


def _field_sites(rs: RuleSet, fname: str) -> list:
    return [s for s in rs.sites.sites if rs.site_blocks[s].kind == "obj" and rs.site_blocks[s].has_field(fname)]


def translate_statement(pp, st: Statement, rs: RuleSet, md: MethodDef) -> list:
    op, a = st.op, st.args
    P = rs.program
    c, m, pc = pp
    out: list = []

    def add(body, head, rule, kind, params=()):
        out.append(HornClause(tuple(body), tuple(head), rule, pp, kind, tuple(params)))

    ret, exc = "ret", "excpt"
    if op == "goto":
        add([_ls(pp)], [_ls((c, m, a[0]))], "goto", "goto", (a[0],))
    elif op == "if":
        i, cmp, j, tgt = a
        add([_ls(pp), Cond("cmp", (Const(cmp), _reg(f"r{i}"), _reg(f"r{j}")))], [_ls((c, m, tgt))], "if-true",
            "if-true", (i, cmp, j, tgt))
        add([_ls(pp), Cond("ncmp", (Const(cmp), _reg(f"r{i}"), _reg(f"r{j}")))], [_ls(_nxt(pp))], "if-false",
            "if-false", (i, cmp, j))
    elif op == "binop":
        d, bop, i, j = a
        val = Fn(bop, (_reg(f"r{i}"), _reg(f"r{j}")))
        add([_ls(pp)], [_ls(_nxt(pp), _upd(V_REGS, f"r{d}", val))], "binop", "binop", (d, bop, i, j))
    elif op == "unop":
        d, uop, i = a
        add([_ls(pp)], [_ls(_nxt(pp), _upd(V_REGS, f"r{d}", Fn(uop, (_reg(f"r{i}"),))))], "unop", "unop", (d, uop, i))
    elif op == "move":
        lhs, rhs = a
        out.extend(translate_rhs(pp, rhs, rs))
        v2 = Var("v''")
        rhs_fact = Atom("RHS", tuple(pp), (v2,))
        if isinstance(lhs, Reg):
            add([rhs_fact, _ls(pp)], [_ls(_nxt(pp), _upd(V_REGS, f"r{lhs.index}", v2))], "move-reg", "move-reg",
                (lhs.index,))
        elif isinstance(lhs, FieldRef):
            o, f = f"r{lhs.obj}", lhs.name
            u2, cls = Var("v'"), Var("c'")
            for s in _field_sites(rs, f):
                blk = _obj(Const(rs.site_blocks[s].cls), (f, u2))
                new_blk = _obj(Const(rs.site_blocks[s].cls), (f, v2))
                add([rhs_fact, _ls(pp), _getblk(o, Fn("FS", (pp_term(s),)), blk)],
                    [_ls(_nxt(pp), V_REGS, Fn("hset", (V_H, pp_term(s), new_blk)))],
                    "move-fld-fs", "move-fld-fs", (lhs.obj, f, s))
            lam = Var("λ")
            add([rhs_fact, _ls(pp), _getblk(o, Fn("NFS", (lam,)), _obj(cls, (f, u2))), _reach(v2)],
                [Atom("H", (), (lam, _obj(cls, (f, v2))))] + list(_lifting_heads(pp)),
                "move-fld-nfs", "move-fld-nfs", (lhs.obj, f))
        elif isinstance(lhs, ArrCell):
            arr = f"r{lhs.array}"
            u2, lam, tau = Var("v'"), Var("λ"), Var("τ")
            joined = Fn("join", (u2, v2))
            add([rhs_fact, _ls(pp), _getblk(arr, Fn("NFS", (lam,)), Fn("array", (tau, u2))), _reach(v2)],
                [Atom("H", (), (lam, Fn("array", (tau, joined))))] + list(_lifting_heads(pp)),
                "move-arr-nfs", "move-arr-nfs", (lhs.array,))
            add([rhs_fact, _ls(pp), _getblk(arr, Fn("FS", (lam,)), Fn("array", (tau, u2)))],
                [_ls(_nxt(pp), V_REGS, Fn("hset", (V_H, lam, Fn("array", (tau, joined)))))],
                "move-arr-fs", "move-arr-fs", (lhs.array,))
        elif isinstance(lhs, StaticRef):
            add([rhs_fact, _ls(pp), _reach(v2)],
                [Atom("S", (lhs.cls, lhs.name), (v2,))] + list(_lifting_heads(pp)),
                "move-static", "move-static", (lhs.cls, lhs.name))
    elif op in ("instanceof", "checkcast"):
        if op == "instanceof":
            d, s, tau = a
        else:
            s, tau = a
        b = Var("b")
        body = [_ls(pp), _getblk(f"r{s}", ANY, b)]
        if op == "checkcast":
            add(body + [Cond("<=", (Fn("get-type", (b,)), Const(tau)))], [_ls(_nxt(pp))], "checkcast", "checkcast",
                (s, tau))
        else:
            add(body + [Cond("<=", (Fn("get-type", (b,)), Const(tau)))],
                [_ls(_nxt(pp), _upd(V_REGS, f"r{d}", Const("true")))], "instanceof-true", "instanceof", (d, s, tau, True))
            add(body + [Cond("not<=", (Fn("get-type", (b,)), Const(tau)))],
                [_ls(_nxt(pp), _upd(V_REGS, f"r{d}", Const("false")))], "instanceof-false", "instanceof",
                (d, s, tau, False))
    elif op in ("new", "newarray", "newintent"):
        d = a[0]
        if op == "new":
            blk = _obj(Const(a[1]), *[(f, Fn("zero", (Const(t),))) for f, t in P.all_fields(a[1])]) \
                if a[1] in P.class_map else _obj(Const(a[1]))
        elif op == "newarray":
            blk = Fn("array", (Const(a[2]), Fn("zero", (Const(a[2]),))))
        else:
            blk = Fn("intent", (Const(a[1]), Const("⊥")))
        if rs.flow_insensitive:
            add([_ls(pp)], [Atom("H", (), (pp_term(pp), blk)), _ls(_nxt(pp), _upd(V_REGS, f"r{d}", Fn("NFS", (pp_term(pp),))))],
                op + "-eager", "alloc-eager", (d,))
        else:
            add([_ls(pp), _reach(Fn("FS", (pp_term(pp),)))],
                [_liftatom(), _ls(_nxt(pp), _upd(_lift(V_REGS), f"r{d}", Fn("FS", (pp_term(pp),))),
                                  Fn("hset", (_lhlift(), pp_term(pp), blk)), _kjoin())],
                op, "alloc", (d,))
    elif op == "start-activity":
        i = f"r{a[0]}"
        lam, cls, u = Var("λ"), Var("c'"), Var("u")
        intent = Fn("intent", (cls, u))
        ctx = _ctx(V_LT, [ANY])
        add([_ls(pp, ctx=ctx), _getblk(i, Fn("NFS", (lam,)), intent)],
            [Atom("I", (), (V_LT, intent)), _ls(_nxt(pp), ctx=ctx)], "start-activity-nfs", "start-act", (a[0], False))
        add([_ls(pp, ctx=ctx), _getblk(i, Fn("FS", (lam,)), intent), _reach(Fn("FS", (lam,)))],
            [Atom("I", (), (V_LT, intent)), _liftatom(), _ls(_nxt(pp), _lift(V_REGS), _lhlift(), _kjoin(), ctx=ctx)],
            "start-activity-fs", "start-act", (a[0], True))
    elif op == "put-extra":
        ri, _rk, rj = a
        lam, cls, u = Var("λ"), Var("c'"), Var("v'")
        joined = Fn("intent", (cls, Fn("join", (u, _reg(f"r{rj}")))))
        add([_ls(pp), _getblk(f"r{ri}", Fn("NFS", (lam,)), Fn("intent", (cls, u))), _reach(_reg(f"r{rj}"))],
            [Atom("H", (), (lam, joined))] + list(_lifting_heads(pp)), "put-extra-nfs", "put-extra", (ri, rj, False))
        add([_ls(pp), _getblk(f"r{ri}", Fn("FS", (lam,)), Fn("intent", (cls, u)))],
            [_ls(_nxt(pp), V_REGS, Fn("hset", (V_H, lam, joined)))], "put-extra-fs", "put-extra", (ri, rj, True))
    elif op == "get-extra":
        u = Var("v'")
        add([_ls(pp), _getblk(f"r{a[0]}", ANY, Fn("intent", (Var("c'"), u)))],
            [_ls(_nxt(pp), _upd(V_REGS, ret, u))], "get-extra", "get-extra", (a[0],))
    elif op == "return":
        src = (c, m) in rs.cfg.sources
        val = Fn("secret", (_reg(ret),)) if src else _reg(ret)
        add([_ls(pp, ctx=_ctx(V_LT, [Var("v*call")]))],
            [Atom("Res", (c, m), (_ctx(V_LT, [Var("v*call")]), val, V_H, V_K))], "return", "return", (src,))
    elif op in ("invoke", "sinvoke"):
        _translate_invoke(pp, st, rs, md, add)
    elif op == "throw":
        add([_ls(pp)], [_ls(pp, _upd(V_REGS, exc, _reg(f"r{a[0]}")), pred="AState")], "throw", "throw", (a[0],))
    elif op == "move-exception":
        add([_ls(pp)], [_ls(_nxt(pp), _upd(V_REGS, f"r{a[0]}", _reg(exc)))], "move-exception", "move-exception", (a[0],))
    elif op == "start-thread":
        i = f"r{a[0]}"
        lam, cls = Var("λ"), Var("c'")
        t = _obj(cls)
        side = Cond("<=", (cls, Const("Thread")))
        add([_ls(pp), _getblk(i, Fn("NFS", (lam,)), t), side], [Atom("T", (), (lam, t)), _ls(_nxt(pp))],
            "start-thread-nfs", "start-thread", (a[0], False))
        add([_ls(pp), _getblk(i, Fn("FS", (lam,)), t), side, _reach(Fn("FS", (lam,)))],
            [Atom("T", (), (lam, t))] + list(_lifting_heads(pp)), "start-thread-fs", "start-thread", (a[0], True))
    elif op in ("interrupt", "interrupted"):
        i = f"r{a[0]}"
        lam, cls, u = Var("λ"), Var("c'"), Var("v'")
        newv = Const("true" if op == "interrupt" else "false")
        before, after = _obj(cls, ("inte", u)), _obj(cls, ("inte", newv))
        regs = V_REGS if op == "interrupt" else _upd(V_REGS, ret, u)
        add([_ls(pp), _getblk(i, Fn("NFS", (lam,)), before)], [Atom("H", (), (lam, after)), _ls(_nxt(pp), regs)],
            op + "-nfs", op, (a[0], False))
        add([_ls(pp), _getblk(i, Fn("FS", (lam,)), before)], [_ls(_nxt(pp), regs, Fn("hset", (V_H, lam, after)))],
            op + "-fs", op, (a[0], True))
    elif op == "is-interrupted":
        u = Var("v'")
        add([_ls(pp), _getblk(f"r{a[0]}", ANY, _obj(Var("c'"), ("inte", u)))], [_ls(_nxt(pp), _upd(V_REGS, ret, u))],
            "is-interrupted", "is-interrupted", (a[0],))
    elif op in ("join", "wait"):
        lt, cls, u = Var("λt"), Var("c'"), Var("v'")
        ctx = _ctx(Fn("NFS", (lt,)), [ANY])
        own = Atom("H", (), (lt, _obj(cls, ("inte", u))))
        add([_ls(pp, ctx=ctx), own, Cond("leq", (Const("false"), u))], [_ls(_nxt(pp), ctx=ctx)], op + "-ok", "thread-ok")
        add([_ls(pp, ctx=ctx), own, Cond("leq", (Const("true"), u))],
            [Atom("H", (), (pp_term(pp), _obj(Const("IntExcpt")))),
             _ls(pp, _upd(V_REGS, exc, Fn("NFS", (pp_term(pp),))), ctx=ctx, pred="AState"),
             Atom("H", (), (lt, _obj(cls, ("inte", Const("false")))))], op + "-interrupted", "thread-int")
    elif op in ("monitor-enter", "monitor-exit"):
        add([_ls(pp)], [_ls(_nxt(pp))], op, "skip")
    else:
        raise ValueError(f"no translation for {op}")
    return out


def invoke_targets(P: Program, name: str, nargs: int) -> list:
    """Classes declaring a non-static ``name`` of the given arity."""
    out = []
    for cd in P.classes:
        md = cd.method(name)
        if md is not None and not md.static and len(md.arg_types) == nargs:
            out.append(cd.name)
    return out


def _translate_invoke(pp, st, rs: RuleSet, md: MethodDef, add) -> None:
    P = rs.program
    c, m, pc = pp
    ret, exc = "ret", "excpt"
    if st.op == "invoke":
        o, name, args = st.args
        callers = [o] + list(args)
        targets = invoke_targets(P, name, len(args))
    else:
        cls, name, args = st.args
        callers = list(args)
        cd = P.class_map.get(cls)
        callee = cd.method(name) if cd is not None else None
        targets = [cls] if callee is not None and callee.static and len(callee.arg_types) == len(args) else []
    argvals = [_reg(f"r{r}") for r in callers]
    ws = [Var(f"w{j}") for j in range(len(callers))]
    for tgt in targets:
        tmd = P.method_at(tgt, name)
        ctx_in = _ctx(V_LT, [ANY])
        body = [_ls(pp, ctx=ctx_in)]
        if st.op == "invoke":
            body += [_getblk(f"r{o}", ANY, _obj(Var("c'"))), Cond("<=", (Var("c'"), Const(tgt)))]
        callee_regs = Fn("regs", tuple(Fn("zero", (Const("int"),)) for _ in range(tmd.locals)) + tuple(argvals)
                         + (Fn("zero", (Const("int"),)), Fn("zero", (Const("int"),))))
        callee_pp = (tgt, name, 0)
        add(body, [Atom("LState", callee_pp, (_ctx(V_LT, argvals), callee_regs, V_H, Const("0*")))],
            st.op + "-call", st.op + "-call", (tuple(callers), tgt, name))
        match = [Cond("=", (V_LT, V_LT2))] + [Cond("meet", (v, w)) for v, w in zip(argvals, ws)]
        hres, kres = Var("h_res"), Var("k_res")
        res = Atom("Res", (tgt, name), (_ctx(V_LT2, ws), Var("v_res"), hres, kres))
        add(body + [res] + match,
            [_ls(_nxt(pp), _upd(_lift(V_REGS, kres), ret, Var("v_res")), hres, _kjoin(V_K, kres), ctx=ctx_in)],
            st.op + "-result", st.op + "-result", (tuple(callers), tgt, name))
        unc = Atom("Uncaught", (tgt, name), (_ctx(V_LT2, ws), Var("v_exc"), hres, kres))
        add(body + [unc] + match,
            [_ls(pp, _upd(_lift(V_REGS, kres), exc, Var("v_exc")), hres, _kjoin(V_K, kres), ctx=ctx_in, pred="AState")],
            st.op + "-uncaught", st.op + "-uncaught", (tuple(callers), tgt, name))


def abstate_rules(pp, md: MethodDef) -> list:
    """Recovery from an abnormal state at ``pp``: handler hit or propagation to the caller."""
    exc = "excpt"
    c, m, pc = pp
    cls = Var("c'")
    body = [_ls(pp, pred="AState"), _getblk(exc, ANY, _obj(cls)), Cond("<=", (cls, Const("Throwable")))]
    return [
        HornClause(tuple(body + [Cond("exc", (pp_term(pp), cls, Var("pc'")))]),
                   (Atom("LState", (c, m, "pc'"), (V_CTX, V_REGS, V_H, V_K)),), "abstate-caught", pp, "abstate-caught"),
        HornClause(tuple(body + [Cond("notexc", (pp_term(pp), cls))]),
                   (Atom("Uncaught", (c, m), (V_CTX, _reg(exc), V_H, V_K)),), "abstate-uncaught", pp,
                   "abstate-uncaught"),
    ]


# ---------------------------------------------------------------------------
# global rules


def global_rules(program: Program, model: LifecycleModel, rs: RuleSet) -> list:
    out = []
    P = program
    cbs = set(model.all_callbacks())
    for cd in P.classes:
        if not P.is_activity(cd.name):
            continue
        for md in cd.methods:
            if md.name not in cbs or md.static:
                continue
            tops = [Fn("top", (Const(t),)) for t in md.arg_types]
            cl, act = Var("c"), Fn("NFS", (Var("c"),))
            regs = Fn("regs", tuple(Fn("zero", (Const("int"),)) for _ in range(md.locals)) + (act,) + tuple(tops)
                      + (Fn("zero", (Const("int"),)), Fn("zero", (Const("int"),))))
            out.append(HornClause(
                (Atom("H", (), (cl, _obj(cl))), Cond("<=", (cl, Const(cd.name)))),
                (Atom("LState", (cd.name, md.name, 0), (_ctx(act, [act] + tops), regs, Const("⊥*"), Const("0*"))),),
                "Cbk", None, "cbk", (cd.name, md.name)))
    for cd in P.classes:
        md = cd.method("run")
        if md is None or md.static or md.arg_types:
            continue
        lam = Var("λ")
        regs = Fn("regs", tuple(Fn("zero", (Const("int"),)) for _ in range(md.locals)) + (Fn("NFS", (lam,)),)
                  + (Fn("zero", (Const("int"),)), Fn("zero", (Const("int"),))))
        out.append(HornClause(
            (Atom("T", (), (lam, _obj(Var("c")))), Cond("<=", (Var("c"), Const(cd.name))),
             Cond("<=", (Var("c"), Const("Thread")))),
            (Atom("LState", (cd.name, "run", 0), (_ctx(Fn("NFS", (lam,)), [Fn("NFS", (lam,))]), regs, Const("⊥*"),
                                                   Const("0*"))),),
            "Tstart", None, "tstart", (cd.name,)))
    cl = Var("c")
    out.append(HornClause((Atom("H", (), (cl, _obj(cl, ("finished", ANY)))),),
                          (Atom("H", (), (cl, _obj(cl, ("finished", Fn("top", (Const("bool"),)))))),), "Fin", None, "fin"))
    lam = Var("λ")
    out.append(HornClause((Atom("H", (), (lam, _obj(cl, ("finished", ANY)))), Cond("<=", (cl, Const("Thread")))),
                          (Atom("H", (), (lam, _obj(cl, ("finished", Fn("top", (Const("bool"),)))))),),
                          "ThreadFin", None, "thread-fin"))
    out.append(HornClause((Atom("H", (), (cl, _obj(cl))),), (Atom("H", (), (cl, Fn("zero-obj", (cl,)))),), "Rep", None,
                          "rep"))
    c2, v = Var("c'"), Var("v")
    out.append(HornClause((Atom("I", (), (V_LT, Fn("intent", (cl, v)))), Cond("<=", (cl, Const("Activity")))),
                          (Atom("H", (), (Fn("in", (cl,)), Fn("intent", (cl, v)))),), "Act", None, "act-intent"))
    out.append(HornClause((Atom("I", (), (V_LT, Fn("intent", (cl, v)))), Cond("<=", (cl, Const("Activity")))),
                          (Atom("H", (), (cl, Fn("fresh-activity", (cl, Fn("parent-of", (V_LT,)),
                                                                    Fn("NFS", (Fn("in", (cl,)),)))))),),
                          "Act", None, "act-obj"))
    # intents queued by a thread are handed to its parent activity, which is not tracked
    out.append(HornClause((Atom("I", (), (lam, Fn("intent", (cl, v)))), Cond("not<=", (lam, Const("Activity"))),
                           Cond("<=", (c2, Const("Activity")))),
                          (Atom("I", (), (c2, Fn("intent", (cl, v)))),), "Act", None, "thread-intent"))
    # a pending thread sees writes made to its object before it is scheduled
    b2 = Var("b")
    out.append(HornClause((Atom("T", (), (lam, ANY)), Atom("H", (), (lam, b2))), (Atom("T", (), (lam, b2)),),
                          "Tpending", None, "thread-pending"))
    w = Var("w")
    out.append(HornClause((Atom("H", (), (c2, _obj(c2, ("parent", Fn("NFS", (cl,))), ("result", w)))),
                           Atom("H", (), (cl, _obj(cl, ("result", ANY))))),
                          (Atom("H", (), (cl, _obj(cl, ("result", w)))),), "Res", None, "res"))
    k = Var("k")
    out.append(HornClause((Atom("Lift", (), (V_H, k)), Cond("=", (Fn("k", (k, Var("pp"))), Const("1"))),
                           Cond("=", (Fn("h", (V_H, Var("pp"))), Var("b")))),
                          (Atom("H", (), (Var("pp"), Var("b"))),), "Lift", None, "builtin"))
    return out


def heap_access_rules() -> list:
    lam, b, i = Var("λ"), Var("b"), "i"
    return [
        HornClause((Cond("leq", (Fn("FS", (lam,)), _reg("ri"))), Cond("=", (Fn("h", (V_H, lam)), b))),
                   (_getblk(i, Fn("FS", (lam,)), b),), "GetBlk-FS", None, "builtin"),
        HornClause((Cond("leq", (Fn("NFS", (lam,)), _reg("ri"))), Atom("H", (), (lam, b))),
                   (_getblk(i, Fn("NFS", (lam,)), b, h=ANY),), "GetBlk-NFS", None, "builtin"),
    ]


# ---------------------------------------------------------------------------
# pretty-printing


_GREEK = {"v*": "v̂*", "h": "ĥ", "k": "k̂", "k'": "k̂'", "lt": "λ̂t", "lt'": "λ̂t'", "v''": "v̂''", "v'": "v̂'",
          "u": "û", "h_res": "ĥres", "k_res": "k̂res", "v_res": "v̂res", "v_exc": "v̂excpt", "ctx": "_", "_": "_"}


def render_term(t, lines: Optional[dict] = None) -> str:
    if isinstance(t, Var):
        return _GREEK.get(t.name, t.name)
    if isinstance(t, Const):
        return t.value
    n, args = t.name, t.args
    r = [render_term(x, lines) for x in args]
    if n == "pp":
        key = (args[0].value, args[1].value, int(args[2].value))
        if lines and key in lines:
            return str(lines[key])
        return f"{args[0].value}.{args[1].value}:{args[2].value}"
    if n == "upd":
        return f"{r[0]}[{r[1]} ↦ {r[2]}]"
    if n == "at":
        return f"{r[0]}[{r[1]}]"
    if n == "lift":
        return f"lift({r[0]}, {r[1]})"
    if n == "lhlift":
        return f"lift_h({r[0]}, {r[1]})"
    if n == "kjoin":
        return f"{r[0]} ⊔̂ {r[1]}"
    if n == "hset":
        return f"{r[0]}[{r[1]} ↦ {r[2]}]"
    if n == "obj":
        flds = ", ".join(f"{render_term(f.args[0])} ↦ {render_term(f.args[1], lines)}" for f in args[1:])
        return f"{r[0]}{{{flds}}}" if flds else f"{r[0]}{{_}}"
    if n == "ctx":
        return "(" + ", ".join(r) + ")"
    if n == "join":
        return f"{r[0]} ⊔ {r[1]}"
    if n == "prim":
        return f"β({args[1].value})"
    return f"{n}({', '.join(r)})"


def render_atom(a, lines: Optional[dict] = None) -> str:
    if isinstance(a, Cond):
        r = [render_term(x, lines) for x in a.args]
        if a.op == "<=":
            return f"{r[0]} ≤ {r[1]}"
        if a.op == "not<=":
            return f"{r[0]} ≰ {r[1]}"
        if a.op == "=":
            return f"{r[0]} = {r[1]}"
        if a.op == "meet":
            return f"{r[0]} ⊓ {r[1]} ⋢ ⊥"
        if a.op == "leq":
            return f"{r[0]} ⊑ {r[1]}"
        if a.op == "cmp":
            return f"{r[1]} {r[0]}̂ {r[2]}"
        if a.op == "ncmp":
            return f"¬({r[1]} {r[0]}̂ {r[2]})"
        if a.op == "exc":
            return f"ExcptTable({r[0]}, {r[1]}) = {r[2]}"
        if a.op == "notexc":
            return f"ExcptTable({r[0]}, {r[1]}) = ⊥"
        return f"{a.op}({', '.join(r)})"
    idx = ""
    if a.index:
        if a.pred in ("LState", "AState", "RHS") and len(a.index) == 3 and lines and \
                isinstance(a.index[2], int) and tuple(a.index) in lines:
            idx = f"⟨{lines[tuple(a.index)]}⟩"
        else:
            idx = "⟨" + ",".join(str(x) for x in a.index) + "⟩"
    args = [render_term(x, lines) for x in a.args]
    if a.pred in ("LState", "AState", "Res", "Uncaught"):
        return f"{a.pred}{idx}({'; '.join(args)})"
    return f"{a.pred}{idx}({', '.join(args)})"


def render_clause(cl: HornClause, lines: Optional[dict] = None) -> str:
    body = " ∧ ".join(render_atom(b, lines) for b in cl.body)
    head = " ∧ ".join(render_atom(h, lines) for h in cl.head)
    return f"{body} ⟹ {head}" if body else head


def source_lines(program: Program) -> dict:
    """Map program points to source line numbers, for printing in listing coordinates."""
    return {pp: st.line for pp, st in program.statements() if st.line}


def pretty(rs: RuleSet, pps: Optional[Iterable] = None, by_line: bool = True) -> str:
    lines = source_lines(rs.program) if by_line else None
    want = set(map(tuple, pps)) if pps is not None else None
    out = []
    for cl in rs.clauses:
        if want is not None and cl.pp not in want:
            continue
        where = "global" if cl.pp is None else (str(lines[cl.pp]) if lines and cl.pp in lines else str(cl.pp))
        out.append(f"[{cl.rule} @ {where}] {render_clause(cl, lines)}")
    return "\n".join(out)


def clauses_at_line(rs: RuleSet, line: int) -> list:
    return [cl for cl in rs.clauses if cl.pp is not None and rs.program.statement(cl.pp).line == line]
