"""Concrete small-step semantics: local rules, activity lifecycle, threads, exploration.

Values are ``Prim(kind, payload, taint)`` or ``Loc(ptr, label)``.  The integer
``0`` doubles as the null reference, as in Dalvik.  Heaps are plain dicts that
are copied on write; every configuration is an immutable snapshot.

Monitor bookkeeping (owner and acquisition count) lives in a side table keyed
by pointer rather than in object fields, so the analysis' field layout is the
declared one.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

from .frontend import (AnalysisConfig, ArrCell, FieldRef, Lit, MethodDef, Program, Reg, StaticRef,
                       is_reference_type)

PUBLIC, SECRET = 0, 1
INT_MIN = -(1 << 63)
MAX_ARRAY = 64  # longer allocations are treated as stuck to keep states small


class Prim(NamedTuple):
    kind: str
    payload: object
    taint: int = PUBLIC


class Loc(NamedTuple):
    ptr: int
    label: object


class Obj(NamedTuple):
    cls: str
    names: tuple
    vals: tuple

    def get(self, name):
        return self.vals[self.names.index(name)]

    def set(self, name, v) -> "Obj":
        i = self.names.index(name)
        return Obj(self.cls, self.names, self.vals[:i] + (v,) + self.vals[i + 1:])


class Arr(NamedTuple):
    elem: str
    vals: tuple


class Intent(NamedTuple):
    cls: str
    extras: tuple  # ((key, value), ...) in insertion order


class LocalState(NamedTuple):
    cls: str
    meth: str
    pc: int
    regs: tuple
    ctx: tuple

    @property
    def pp(self) -> tuple:
        return (self.cls, self.meth, self.pc)


class Waiting(NamedTuple):
    loc: Loc
    count: int


class Stack(NamedTuple):
    frames: tuple  # top first
    abnormal: bool = False


class LocalConfig(NamedTuple):
    stack: Stack
    pi: tuple
    gamma: tuple
    heap: dict
    statics: dict
    owner: Loc
    monitors: dict
    counter: int


class ActFrame(NamedTuple):
    loc: Loc
    state: str
    pi: tuple
    gamma: tuple
    stack: Stack
    active: bool


class ThreadFrame(NamedTuple):
    parent: Loc
    tloc: Loc
    pi: tuple
    gamma: tuple
    stack: Stack


class Config(NamedTuple):
    acts: tuple  # top first
    threads: tuple
    heap: dict
    statics: dict
    monitors: dict
    counter: int


ZERO = Prim("int", 0)
FALSE = Prim("bool", False)
TRUE = Prim("bool", True)


def default_value(t: str) -> Prim:
    if t == "bool":
        return FALSE
    if t == "String":
        return Prim("String", "")
    return ZERO


def wrap64(n: int) -> int:
    n &= (1 << 64) - 1
    return n - (1 << 64) if n >> 63 else n


def block_type(b) -> str:
    if isinstance(b, Obj):
        return b.cls
    if isinstance(b, Arr):
        return b.elem + "[]"
    return "Intent"


# ---------------------------------------------------------------------------
# lifecycle model


LIFECYCLE_STATES = ("constructor", "onStart", "running", "onResume", "onPause", "onStop", "onRestart",
                    "onDestroy", "onActivityResult")
_DEFAULT_TRANSITIONS = (
    ("constructor", "onStart"), ("onStart", "onResume"), ("onResume", "running"), ("running", "onPause"),
    ("onPause", "onResume"), ("onPause", "onStop"), ("onStop", "onRestart"), ("onRestart", "onStart"),
    ("onStop", "onDestroy"),
)


@dataclass(frozen=True)
class LifecycleModel:
    states: tuple = LIFECYCLE_STATES
    transitions: frozenset = frozenset(_DEFAULT_TRANSITIONS)
    callbacks: tuple = ()  # ((state, (method, ...)), ...); unlisted states use the same-named method

    def cb(self, state: str) -> tuple:
        for s, ms in self.callbacks:
            if s == state:
                return ms
        if state == "constructor":
            return ("<init>",)
        return (state,)

    def all_callbacks(self) -> tuple:
        out = []
        for s in self.states:
            for m in self.cb(s):
                if m not in out:
                    out.append(m)
        return tuple(out)

    def successors(self, state: str) -> list:
        return sorted(t for s, t in self.transitions if s == state)

    @classmethod
    def from_json(cls, text: str) -> "LifecycleModel":
        d = json.loads(text)
        states = tuple(d.get("states", LIFECYCLE_STATES))
        trans = frozenset(tuple(x) for x in d.get("transitions", _DEFAULT_TRANSITIONS))
        cbs = tuple(sorted((s, tuple(ms)) for s, ms in d.get("callbacks", {}).items()))
        for a, b in trans:
            if a not in states or b not in states:
                raise ValueError(f"transition {a}->{b} uses an unknown state")
        return cls(states, trans, cbs)


# ---------------------------------------------------------------------------
# the interpreter


class StepFailed(Exception):
    """Internal: the current rule does not apply (stuck)."""


def _stuck():
    raise StepFailed()


class Interpreter:
    def __init__(self, program: Program, cfg: AnalysisConfig, model: Optional[LifecycleModel] = None):
        self.program = program
        self.cfg = cfg
        self.model = model or LifecycleModel()

    # -- helpers ----------------------------------------------------------

    def has_type(self, heap: dict, v, t: str) -> bool:
        if isinstance(v, Loc):
            b = heap.get(v.ptr)
            return b is not None and self.program.subtype(block_type(b), t)
        if v.kind == t:
            return True
        return v.kind == "int" and v.payload == 0 and is_reference_type(t)

    def method(self, cls: str, name: str) -> MethodDef:
        return self.program.method_at(cls, name)

    def new_obj(self, cls: str) -> Obj:
        flds = self.program.all_fields(cls)
        return Obj(cls, tuple(f for f, _ in flds), tuple(default_value(t) for _, t in flds))

    # -- rhs ---------------------------------------------------------------

    def eval_rhs(self, sigma: LocalConfig, rhs):
        """Value of ``rhs`` in the top local state, or ``None`` when stuck."""
        top = sigma.stack.frames[0]
        regs = top.regs
        if isinstance(rhs, Lit):
            return Prim(rhs.kind, rhs.value)
        if isinstance(rhs, Reg):
            return regs[rhs.index]
        if isinstance(rhs, FieldRef):
            o = regs[rhs.obj]
            b = sigma.heap.get(o.ptr) if isinstance(o, Loc) else None
            if not isinstance(b, Obj) or rhs.name not in b.names:
                return None
            return b.get(rhs.name)
        if isinstance(rhs, ArrCell):
            a, j = regs[rhs.array], regs[rhs.index]
            b = sigma.heap.get(a.ptr) if isinstance(a, Loc) else None
            if not isinstance(b, Arr) or not (isinstance(j, Prim) and j.kind == "int"):
                return None
            if not 0 <= j.payload < len(b.vals):
                return None
            return b.vals[j.payload]
        if isinstance(rhs, StaticRef):
            return sigma.statics.get((rhs.cls, rhs.name))
        raise TypeError(rhs)

    # -- local reduction -----------------------------------------------------

    def step_local(self, sigma: LocalConfig) -> list:
        """All ``(rule, successor)`` pairs; empty means stuck or finished."""
        frames = sigma.stack.frames
        if not frames:
            return []
        top = frames[0]
        try:
            if sigma.stack.abnormal:
                return self._step_abnormal(sigma)
            if isinstance(top, Waiting):
                return self._step_waiting(sigma)
            md = self.method(top.cls, top.meth)
            if not 0 <= top.pc < len(md.body):
                return []
            st = md.body[top.pc]
            return self._step_stmt(sigma, top, md, st)
        except StepFailed:
            return []

    def _set_top(self, sigma: LocalConfig, top: LocalState, **kw) -> LocalConfig:
        frames = (top,) + sigma.stack.frames[1:]
        return sigma._replace(stack=Stack(frames, False), **kw)

    def _next(self, sigma, top, regs=None, **kw) -> LocalConfig:
        return self._set_top(sigma, top._replace(pc=top.pc + 1, regs=top.regs if regs is None else regs), **kw)

    def _fresh(self, sigma: LocalConfig, label, block) -> tuple:
        loc = Loc(sigma.counter, label)
        heap = dict(sigma.heap)
        heap[loc.ptr] = block
        return loc, heap, sigma.counter + 1

    def _owner_inte(self, sigma: LocalConfig):
        b = sigma.heap.get(sigma.owner.ptr)
        if not isinstance(b, Obj) or "inte" not in b.names:
            _stuck()
        return b

    def _loc_block(self, sigma, v, kind=None):
        if not isinstance(v, Loc):
            _stuck()
        b = sigma.heap.get(v.ptr)
        if b is None or (kind is not None and not isinstance(b, kind)):
            _stuck()
        return b

    def _step_stmt(self, sigma: LocalConfig, top: LocalState, md: MethodDef, st) -> list:
        op, a = st.op, st.args
        regs = top.regs
        pp = top.pp
        P = self.program

        def setreg(i, v, base=regs):
            return base[:i] + (v,) + base[i + 1:]

        if op == "goto":
            return [("R-Goto", self._set_top(sigma, top._replace(pc=a[0])))]
        if op == "if":
            res = concrete_compare(a[1], regs[a[0]], regs[a[2]])
            if res is None:
                return []
            if res:
                return [("R-True", self._set_top(sigma, top._replace(pc=a[3])))]
            return [("R-False", self._next(sigma, top))]
        if op == "move":
            lhs, rhs = a
            v = self.eval_rhs(sigma, rhs)
            if v is None:
                return []
            if isinstance(lhs, Reg):
                return [("R-MoveReg", self._next(sigma, top, setreg(lhs.index, v)))]
            if isinstance(lhs, FieldRef):
                o = self._loc_block(sigma, regs[lhs.obj], Obj)
                if lhs.name not in o.names:
                    return []
                heap = dict(sigma.heap)
                heap[regs[lhs.obj].ptr] = o.set(lhs.name, v)
                return [("R-MoveFld", self._next(sigma, top, heap=heap))]
            if isinstance(lhs, ArrCell):
                arr = self._loc_block(sigma, regs[lhs.array], Arr)
                j = regs[lhs.index]
                if not (isinstance(j, Prim) and j.kind == "int" and 0 <= j.payload < len(arr.vals)):
                    return []
                if not self.has_type(sigma.heap, v, arr.elem):
                    return []
                heap = dict(sigma.heap)
                heap[regs[lhs.array].ptr] = Arr(arr.elem, arr.vals[:j.payload] + (v,) + arr.vals[j.payload + 1:])
                return [("R-MoveArr", self._next(sigma, top, heap=heap))]
            if isinstance(lhs, StaticRef):
                statics = dict(sigma.statics)
                statics[(lhs.cls, lhs.name)] = v
                return [("R-MoveSFld", self._next(sigma, top, statics=statics))]
        if op == "unop":
            v = concrete_unop(a[1], regs[a[2]])
            if v is None:
                return []
            return [("R-UnOp", self._next(sigma, top, setreg(a[0], v)))]
        if op == "binop":
            v = concrete_binop(a[1], regs[a[2]], regs[a[3]])
            if v is None:
                return []
            return [("R-BinOp", self._next(sigma, top, setreg(a[0], v)))]
        if op == "new":
            cls = a[1]
            if cls not in P.class_map or cls == "Intent":
                return []
            loc, heap, ctr = self._fresh(sigma, pp, self.new_obj(cls))
            return [("R-NewObj", self._next(sigma, top, setreg(a[0], loc), heap=heap, counter=ctr))]
        if op == "newarray":
            n = regs[a[1]]
            if not (isinstance(n, Prim) and n.kind == "int" and 0 <= n.payload <= MAX_ARRAY):
                return []
            arr = Arr(a[2], (default_value(a[2]),) * n.payload)
            loc, heap, ctr = self._fresh(sigma, pp, arr)
            return [("R-NewArr", self._next(sigma, top, setreg(a[0], loc), heap=heap, counter=ctr))]
        if op == "newintent":
            loc, heap, ctr = self._fresh(sigma, pp, Intent(a[1], ()))
            return [("R-NewIntent", self._next(sigma, top, setreg(a[0], loc), heap=heap, counter=ctr))]
        if op == "put-extra":
            i = self._loc_block(sigma, regs[a[0]], Intent)
            key, val = regs[a[1]], regs[a[2]]
            extras = tuple((k, v) for k, v in i.extras if not _same_key(k, key)) + ((key, val),)
            heap = dict(sigma.heap)
            heap[regs[a[0]].ptr] = Intent(i.cls, extras)
            return [("R-PutExtra", self._next(sigma, top, heap=heap))]
        if op == "get-extra":
            i = self._loc_block(sigma, regs[a[0]], Intent)
            key = regs[a[1]]
            for k, v in i.extras:
                if _same_key(k, key):
                    if not self.has_type(sigma.heap, v, a[2]):
                        return []
                    return [("R-GetExtra", self._next(sigma, top, setreg(md.ret_reg, v)))]
            return []
        if op == "start-activity":
            i = self._loc_block(sigma, regs[a[0]], Intent)
            return [("R-StartAct", self._next(sigma, top, pi=(i,) + sigma.pi))]
        if op == "invoke":
            recv = regs[a[0]]
            o = self._loc_block(sigma, recv, Obj)
            cls = P.try_lookup(o.cls, a[1])
            if cls is None:
                return []
            callee = self.method(cls, a[1])
            if callee.static or len(callee.arg_types) != len(a[2]):
                return []
            args = tuple(regs[r] for r in a[2])
            cregs = (ZERO,) * callee.locals + (recv,) + args + (ZERO, ZERO)
            frame = LocalState(cls, a[1], 0, cregs, (recv,) + args)
            return [("R-Call", sigma._replace(stack=Stack((frame,) + sigma.stack.frames, False)))]
        if op == "sinvoke":
            cd = P.class_map.get(a[0])
            callee = cd.method(a[1]) if cd is not None else None
            if callee is None or not callee.static or len(callee.arg_types) != len(a[2]):
                return []
            args = tuple(regs[r] for r in a[2])
            cregs = (ZERO,) * callee.locals + args + (ZERO, ZERO)
            frame = LocalState(a[0], a[1], 0, cregs, args)
            return [("R-SCall", sigma._replace(stack=Stack((frame,) + sigma.stack.frames, False)))]
        if op == "return":
            frames = sigma.stack.frames
            if len(frames) < 2 or not isinstance(frames[1], LocalState):
                return []
            res = regs[md.ret_reg]
            if (top.cls, top.meth) in self.cfg.sources and isinstance(res, Prim):
                res = res._replace(taint=SECRET)
            caller = frames[1]
            cmd = self.method(caller.cls, caller.meth)
            caller = caller._replace(pc=caller.pc + 1, regs=setreg(cmd.ret_reg, res, caller.regs))
            return [("R-Return", sigma._replace(stack=Stack((caller,) + frames[2:], False)))]
        if op == "throw":
            v = regs[a[0]]
            o = self._loc_block(sigma, v, Obj)
            if not P.is_subclass(o.cls, "Throwable"):
                return []
            t = top._replace(regs=setreg(md.excpt_reg, v))
            return [("R-Throw", sigma._replace(stack=Stack((t,) + sigma.stack.frames[1:], True)))]
        if op == "move-exception":
            return [("R-MoveException", self._next(sigma, top, setreg(a[0], regs[md.excpt_reg])))]
        if op == "start-thread":
            v = regs[a[0]]
            o = self._loc_block(sigma, v, Obj)
            if not P.is_thread(o.cls):
                return []
            return [("R-StartThread", self._next(sigma, top, gamma=(v,) + sigma.gamma))]
        if op in ("interrupt", "interrupted", "is-interrupted"):
            v = regs[a[0]]
            o = self._loc_block(sigma, v, Obj)
            if "inte" not in o.names:
                return []
            if op == "is-interrupted":
                return [("R-IsInterruptedThread", self._next(sigma, top, setreg(md.ret_reg, o.get("inte"))))]
            heap = dict(sigma.heap)
            heap[v.ptr] = o.set("inte", TRUE if op == "interrupt" else FALSE)
            if op == "interrupt":
                return [("R-InterruptThread", self._next(sigma, top, heap=heap))]
            return [("R-InterruptedThread", self._next(sigma, top, setreg(md.ret_reg, o.get("inte")), heap=heap))]
        if op == "join":
            me = self._owner_inte(sigma)
            if me.get("inte").payload:
                return [("R-InterruptJoin", self._interrupt(sigma, top, md, me))]
            o = self._loc_block(sigma, regs[a[0]], Obj)
            if not P.is_thread(o.cls) or not o.get("finished").payload:
                return []
            return [("R-JoinThread", self._next(sigma, top))]
        if op in ("monitor-enter", "monitor-exit", "wait"):
            v = regs[a[0]]
            self._loc_block(sigma, v, Obj)
            owner, cnt = sigma.monitors.get(v.ptr, (None, 0))
            mons = dict(sigma.monitors)
            if op == "monitor-enter":
                if cnt == 0:
                    mons[v.ptr] = (sigma.owner.ptr, 1)
                    return [("R-MonitorEnter1", self._next(sigma, top, monitors=mons))]
                if owner == sigma.owner.ptr:
                    mons[v.ptr] = (owner, cnt + 1)
                    return [("R-MonitorEnter2", self._next(sigma, top, monitors=mons))]
                return []
            if owner != sigma.owner.ptr or cnt < 1:
                return []
            if op == "monitor-exit":
                mons[v.ptr] = (owner, cnt - 1)
                return [("R-MonitorExit", self._next(sigma, top, monitors=mons))]
            mons[v.ptr] = (owner, 0)
            stack = Stack((Waiting(v, cnt),) + sigma.stack.frames, False)
            return [("R-StartWait", sigma._replace(stack=stack, monitors=mons))]
        if op in ("checkcast", "instanceof"):
            src = regs[a[0]] if op == "checkcast" else regs[a[1]]
            b = self._loc_block(sigma, src)
            ok = P.subtype(block_type(b), a[-1])
            if op == "checkcast":
                return [("R-Cast", self._next(sigma, top))] if ok else []
            name = "R-InstOfTrue" if ok else "R-InstOfFalse"
            return [(name, self._next(sigma, top, setreg(a[0], TRUE if ok else FALSE)))]
        raise ValueError(f"unhandled statement {op}")

    def _interrupt(self, sigma: LocalConfig, top: LocalState, md: MethodDef, me: Obj,
                   below: tuple = ()) -> LocalConfig:
        """Raise a fresh IntExcpt at the current pp and clear the owner's flag."""
        loc, heap, ctr = self._fresh(sigma, top.pp, self.new_obj("IntExcpt"))
        heap[sigma.owner.ptr] = me.set("inte", FALSE)
        regs = top.regs[:md.excpt_reg] + (loc,) + top.regs[md.excpt_reg + 1:]
        rest = below if below else sigma.stack.frames[1:]
        return sigma._replace(stack=Stack((top._replace(regs=regs),) + rest, True), heap=heap, counter=ctr)

    def _step_waiting(self, sigma: LocalConfig) -> list:
        w = sigma.stack.frames[0]
        below = sigma.stack.frames[1:]
        state = below[0]
        md = self.method(state.cls, state.meth)
        me = self._owner_inte(sigma)
        out = []
        if me.get("inte").payload:
            out.append(("R-InterruptWait", self._interrupt(sigma, state, md, me, below[1:] or ())))
            # _interrupt puts the new state on top of ``below[1:]``
            fixed = out[-1][1]
            out[-1] = (out[-1][0], fixed._replace(stack=Stack((fixed.stack.frames[0],) + below[1:], True)))
        else:
            _owner, cnt = sigma.monitors.get(w.loc.ptr, (None, 0))
            if cnt == 0:
                mons = dict(sigma.monitors)
                mons[w.loc.ptr] = (sigma.owner.ptr, w.count)
                nxt = state._replace(pc=state.pc + 1)
                out.append(("R-StopWait", sigma._replace(stack=Stack((nxt,) + below[1:], False), monitors=mons)))
        return out

    def _step_abnormal(self, sigma: LocalConfig) -> list:
        top = sigma.stack.frames[0]
        md = self.method(top.cls, top.meth)
        exc = top.regs[md.excpt_reg]
        o = self._loc_block(sigma, exc, Obj)
        handler = self.program.excpt_handler(top.pp, o.cls)
        if handler is not None:
            return [("R-Caught", self._set_top(sigma, top._replace(pc=handler)))]
        rest = sigma.stack.frames[1:]
        if not rest or not isinstance(rest[0], LocalState):
            return []
        caller = rest[0]
        cmd = self.method(caller.cls, caller.meth)
        regs = caller.regs[:cmd.excpt_reg] + (exc,) + caller.regs[cmd.excpt_reg + 1:]
        return [("R-UnCaught", sigma._replace(stack=Stack((caller._replace(regs=regs),) + rest[1:], True)))]

    # -- callbacks -----------------------------------------------------------

    def arg_pool(self, heap: dict, act: Loc, t: str) -> list:
        if t == "int":
            return [ZERO, Prim("int", 1, SECRET)]
        if t == "bool":
            return [FALSE, Prim("bool", True, SECRET)]
        if t == "String":
            return [Prim("String", ""), Prim("String", "secret", SECRET)]
        if self.has_type(heap, act, t):
            return [act]
        return [ZERO]

    def callback_stacks(self, heap: dict, act: Loc, state: str) -> list:
        """Every callback stack for ``state``: ``(method-name, Stack)`` pairs.

        A state without any callback yields an empty, already successful stack.
        """
        cls = heap[act.ptr].cls
        out = []
        for m in self.model.cb(state):
            defining = self.program.try_lookup(cls, m)
            if defining is None:
                continue
            md = self.method(defining, m)
            if md.static:
                continue
            pools = [self.arg_pool(heap, act, t) for t in md.arg_types]
            for args in itertools.product(*pools):
                regs = (ZERO,) * md.locals + (act,) + tuple(args) + (ZERO, ZERO)
                out.append((m, Stack((LocalState(defining, m, 0, regs, (act,) + tuple(args)),), False)))
        if not out:
            out.append((None, Stack((), False)))
        return out

    def successful(self, stack: Stack) -> bool:
        if stack.abnormal:
            return False
        if not stack.frames:
            return True
        if len(stack.frames) != 1 or not isinstance(stack.frames[0], LocalState):
            return False
        top = stack.frames[0]
        body = self.method(top.cls, top.meth).body
        return 0 <= top.pc < len(body) and body[top.pc].op == "return"

    # -- global reduction ----------------------------------------------------

    def step_global(self, psi: Config) -> list:
        """All ``(rule, frame-id, pp, callback, successor)`` tuples."""
        out = []
        acts = psi.acts
        active = [i for i, f in enumerate(acts) if f.active]
        for i in active:
            self._active_rules(psi, i, out)
        for j in range(len(psi.threads)):
            self._thread_rules(psi, j, out)
        if not active:
            self._lifecycle_rules(psi, out)
        return out

    def _local_of_act(self, psi: Config, f: ActFrame) -> LocalConfig:
        return LocalConfig(f.stack, f.pi, f.gamma, psi.heap, psi.statics, f.loc, psi.monitors, psi.counter)

    def _pp_of(self, stack: Stack):
        for fr in stack.frames:
            if isinstance(fr, LocalState):
                return fr.pp
        return None

    def _active_rules(self, psi: Config, i: int, out: list) -> None:
        f = psi.acts[i]
        sigma = self._local_of_act(psi, f)
        for rule, s2 in self.step_local(sigma):
            nf = f._replace(pi=s2.pi, gamma=s2.gamma, stack=s2.stack)
            acts = psi.acts[:i] + (nf,) + psi.acts[i + 1:]
            out.append((rule, f"A{i}", self._pp_of(f.stack), None,
                        Config(acts, psi.threads, s2.heap, s2.statics, s2.monitors, s2.counter)))
        if self.successful(f.stack):
            acts = psi.acts[:i] + (f._replace(active=False),) + psi.acts[i + 1:]
            out.append(("A-Deactivate", f"A{i}", None, None, psi._replace(acts=acts)))
        for k, tl in enumerate(f.gamma):
            b = psi.heap.get(tl.ptr)
            if not isinstance(b, Obj):
                continue
            run_cls = self.program.try_lookup(b.cls, "run")
            if run_cls is None:
                continue
            md = self.method(run_cls, "run")
            if md.static or md.arg_types:
                continue
            regs = (ZERO,) * md.locals + (tl,) + (ZERO, ZERO)
            st = Stack((LocalState(run_cls, "run", 0, regs, (tl,)),), False)
            nf = f._replace(gamma=f.gamma[:k] + f.gamma[k + 1:])
            acts = psi.acts[:i] + (nf,) + psi.acts[i + 1:]
            tf = ThreadFrame(f.loc, tl, (), (), st)
            out.append(("A-ThreadStart", f"A{i}", None, "run", psi._replace(acts=acts, threads=(tf,) + psi.threads)))

    def _thread_rules(self, psi: Config, j: int, out: list) -> None:
        t = psi.threads[j]
        sigma = LocalConfig(t.stack, t.pi, t.gamma, psi.heap, psi.statics, t.tloc, psi.monitors, psi.counter)
        for rule, s2 in self.step_local(sigma):
            nt = t._replace(pi=s2.pi, gamma=s2.gamma, stack=s2.stack)
            threads = psi.threads[:j] + (nt,) + psi.threads[j + 1:]
            out.append((rule, f"T{j}", self._pp_of(t.stack), None,
                        Config(psi.acts, threads, s2.heap, s2.statics, s2.monitors, s2.counter)))
        others = psi.threads[:j] + psi.threads[j + 1:]
        if not t.pi and not t.gamma and self.successful(t.stack):
            b = psi.heap.get(t.tloc.ptr)
            if isinstance(b, Obj) and "finished" in b.names:
                heap = dict(psi.heap)
                heap[t.tloc.ptr] = b.set("finished", TRUE)
                out.append(("T-Kill", f"T{j}", None, None, psi._replace(threads=others, heap=heap)))
        for i, f in enumerate(psi.acts):
            if f.loc != t.parent:
                continue
            if t.pi:
                nf = f._replace(pi=(t.pi[0],) + f.pi)
                nt = t._replace(pi=t.pi[1:])
                acts = psi.acts[:i] + (nf,) + psi.acts[i + 1:]
                threads = psi.threads[:j] + (nt,) + psi.threads[j + 1:]
                out.append(("T-Intent", f"T{j}", None, None, psi._replace(acts=acts, threads=threads)))
            for k, tl in enumerate(t.gamma):
                nf = f._replace(gamma=(tl,) + f.gamma)
                nt = t._replace(gamma=t.gamma[:k] + t.gamma[k + 1:])
                acts = psi.acts[:i] + (nf,) + psi.acts[i + 1:]
                threads = psi.threads[:j] + (nt,) + psi.threads[j + 1:]
                out.append(("T-Thread", f"T{j}", None, None, psi._replace(acts=acts, threads=threads)))

    def _finished(self, psi: Config, loc: Loc) -> bool:
        b = psi.heap.get(loc.ptr)
        return isinstance(b, Obj) and "finished" in b.names and b.get("finished") == TRUE

    def _lifecycle_rules(self, psi: Config, out: list) -> None:
        acts = psi.acts
        if not acts:
            return
        top = acts[0]
        rest = acts[1:]
        fin = self._finished(psi, top.loc)
        for s2 in self.model.successors(top.state):
            if top.pi and (top.state, s2) != ("running", "onPause"):
                continue
            if fin and (top.state, s2) not in (("running", "onPause"), ("onPause", "onStop"), ("onStop", "onDestroy")):
                continue
            for m, st in self.callback_stacks(psi.heap, top.loc, s2):
                nf = top._replace(state=s2, stack=st, active=True)
                out.append(("A-Step", "A0", None, m, psi._replace(acts=(nf,) + rest)))
        for i, f in enumerate(acts):
            if f.state == "onDestroy" and self._finished(psi, f.loc):
                out.append(("A-Destroy", f"A{i}", None, None, psi._replace(acts=acts[:i] + acts[i + 1:])))
        if top.state == "running" and not top.pi:
            b = psi.heap[top.loc.ptr]
            if "finished" in b.names:
                heap = dict(psi.heap)
                heap[top.loc.ptr] = b.set("finished", TRUE)
                out.append(("A-Back", "A0", None, None, psi._replace(heap=heap)))
        if top.state == "onDestroy":
            cls = psi.heap[top.loc.ptr].cls
            o = self.new_obj(cls)
            loc = Loc(psi.counter, cls)
            heap = dict(psi.heap)
            heap[loc.ptr] = o
            for m, st in self.callback_stacks(heap, loc, "constructor"):
                nf = ActFrame(loc, "constructor", top.pi, top.gamma, st, True)
                out.append(("A-Replace", "A0", None, m,
                            psi._replace(acts=(nf,) + rest, heap=heap, counter=psi.counter + 1)))
        if top.state in ("onResume", "onPause"):
            for i in range(1, len(acts)):
                f = acts[i]
                for s1, s2 in (("onPause", "onStop"), ("onStop", "onDestroy")):
                    if f.state != s1:
                        continue
                    for m, st in self.callback_stacks(psi.heap, f.loc, s2):
                        nf = f._replace(state=s2, stack=st, active=True)
                        out.append(("A-Hidden", f"A{i}", None, m, psi._replace(acts=acts[:i] + (nf,) + acts[i + 1:])))
        if top.state in ("onPause", "onStop") and top.pi:
            self._a_start(psi, out)
        if len(acts) >= 2 and top.state == "onPause" and not top.pi and fin:
            below = acts[1]
            parent = psi.heap[top.loc.ptr].get("parent") if "parent" in psi.heap[top.loc.ptr].names else None
            if below.state in ("onPause", "onStop") and parent == below.loc:
                if below.pi:
                    out.append(("A-Swap", "A0", None, None, psi._replace(acts=(below, top) + acts[2:])))
                else:
                    self._a_result(psi, out)

    def _a_start(self, psi: Config, out: list) -> None:
        top = psi.acts[0]
        i = top.pi[0]
        c = i.cls
        if c not in self.program.class_map or not self.program.is_activity(c):
            return
        heap = dict(psi.heap)
        ctr = psi.counter
        gamma_ctx: dict = {}
        extras = []
        for k, v in i.extras:
            k2, ctr = serialize_into(heap, k, gamma_ctx, ctr)
            v2, ctr = serialize_into(heap, v, gamma_ctx, ctr)
            extras.append((k2, v2))
        act = Loc(ctr, c)
        intent_loc = Loc(ctr + 1, ("in", c))
        ctr += 2
        o = self.new_obj(c).set("finished", FALSE).set("intent", intent_loc).set("parent", top.loc)
        heap[act.ptr] = o
        heap[intent_loc.ptr] = Intent(c, tuple(extras))
        below = top._replace(pi=top.pi[1:])
        for m, st in self.callback_stacks(heap, act, "constructor"):
            nf = ActFrame(act, "constructor", (), (), st, True)
            out.append(("A-Start", "A0", None, m, psi._replace(acts=(nf, below) + psi.acts[1:], heap=heap, counter=ctr)))

    def _a_result(self, psi: Config, out: list) -> None:
        child, parent = psi.acts[0], psi.acts[1]
        heap = dict(psi.heap)
        res = heap[child.loc.ptr].get("result")
        w, ctr = serialize_into(heap, res, {}, psi.counter)
        pb = heap[parent.loc.ptr]
        if "result" not in pb.names:
            return
        heap[parent.loc.ptr] = pb.set("result", w)
        for m, st in self.callback_stacks(heap, parent.loc, "onActivityResult"):
            nf = parent._replace(stack=st, active=True)
            out.append(("A-Result", "A1", None, m, psi._replace(acts=(nf, child) + psi.acts[2:], heap=heap, counter=ctr)))

    # -- initial configurations -------------------------------------------------

    def initial_configs(self) -> list:
        out = []
        statics = {(c, f): default_value(t) for c, f, t in self.program.static_fields()}
        for c in self.cfg.entry_activities:
            o = self.new_obj(c).set("finished", FALSE)
            loc = Loc(0, c)
            heap = {0: o}
            for m, st in self.callback_stacks(heap, loc, "constructor"):
                out.append((m, Config((ActFrame(loc, "constructor", (), (), st, True),), (), heap, dict(statics), {}, 1)))
        return out


def _same_key(a, b) -> bool:
    if isinstance(a, Loc) or isinstance(b, Loc):
        return a == b
    return a.kind == b.kind and a.payload == b.payload


# ---------------------------------------------------------------------------
# primitive operators


def concrete_binop(op: str, x, y) -> Optional[Prim]:
    if not (isinstance(x, Prim) and isinstance(y, Prim)):
        return None
    t = x.taint | y.taint
    if op in ("and", "or", "xor"):
        if x.kind != "bool" or y.kind != "bool":
            return None
        r = {"and": x.payload and y.payload, "or": x.payload or y.payload, "xor": x.payload != y.payload}[op]
        return Prim("bool", bool(r), t)
    if x.kind != "int" or y.kind != "int":
        return None
    a, b = x.payload, y.payload
    if op == "add":
        r = a + b
    elif op == "sub":
        r = a - b
    elif op == "mul":
        r = a * b
    elif op in ("div", "rem"):
        if b == 0:
            return None
        q = abs(a) // abs(b)
        if (a < 0) != (b < 0):
            q = -q
        r = q if op == "div" else a - q * b
    else:
        return None
    return Prim("int", wrap64(r), t)


def concrete_unop(op: str, x) -> Optional[Prim]:
    if not isinstance(x, Prim):
        return None
    if op == "neg" and x.kind == "int":
        return Prim("int", wrap64(-x.payload), x.taint)
    if op == "not" and x.kind == "bool":
        return Prim("bool", not x.payload, x.taint)
    return None


def concrete_compare(cmp: str, x, y) -> Optional[bool]:
    if cmp in ("==", "!="):
        if isinstance(x, Loc) or isinstance(y, Loc):
            eq = isinstance(x, Loc) and isinstance(y, Loc) and x.ptr == y.ptr
        else:
            eq = x.kind == y.kind and x.payload == y.payload
        return eq if cmp == "==" else not eq
    if not (isinstance(x, Prim) and isinstance(y, Prim) and x.kind == "int" and y.kind == "int"):
        return None
    a, b = x.payload, y.payload
    return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[cmp]


# ---------------------------------------------------------------------------
# serialization and taint


def serialize_into(heap: dict, v, ctx: dict, counter: int) -> tuple:
    """Deep-copy ``v`` into ``heap`` (mutated) with fresh pointers.

    ``ctx`` maps already copied pointers to their copies, which preserves
    sharing and cycles.  Returns ``(copy, next_counter)``.
    """
    if isinstance(v, Prim):
        return v, counter
    if v.ptr in ctx:
        return ctx[v.ptr], counter
    new = Loc(counter, v.label)
    ctx[v.ptr] = new
    counter += 1
    b = heap[v.ptr]
    if isinstance(b, Obj):
        vals = []
        for x in b.vals:
            x2, counter = serialize_into(heap, x, ctx, counter)
            vals.append(x2)
        heap[new.ptr] = Obj(b.cls, b.names, tuple(vals))
    elif isinstance(b, Arr):
        vals = []
        for x in b.vals:
            x2, counter = serialize_into(heap, x, ctx, counter)
            vals.append(x2)
        heap[new.ptr] = Arr(b.elem, tuple(vals))
    else:
        extras = []
        for k, x in b.extras:
            k2, counter = serialize_into(heap, k, ctx, counter)
            x2, counter = serialize_into(heap, x, ctx, counter)
            extras.append((k2, x2))
        heap[new.ptr] = Intent(b.cls, tuple(extras))
    return new, counter


def serialize(heap: dict, v, counter: Optional[int] = None) -> tuple:
    """Return ``(copy, extension)`` where ``extension`` holds only the fresh blocks."""
    start = counter if counter is not None else (max(heap) + 1 if heap else 0)
    work = dict(heap)
    copy, _ = serialize_into(work, v, {}, start)
    ext = {p: b for p, b in work.items() if p not in heap}
    return copy, ext


def block_values(b) -> tuple:
    if isinstance(b, Intent):
        return tuple(x for kv in b.extras for x in kv)
    return b.vals


def tainted_values(b) -> tuple:
    """Values a block carries for taint: intent keys select, they are not payload."""
    if isinstance(b, Intent):
        return tuple(x for _k, x in b.extras)
    return b.vals


def taint_of(heap: dict, v) -> int:
    """Join of all primitive taints reachable from ``v``."""
    if isinstance(v, Prim):
        return v.taint
    seen = set()
    todo = [v]
    while todo:
        x = todo.pop()
        if isinstance(x, Prim):
            if x.taint:
                return SECRET
            continue
        if x.ptr in seen:
            continue
        seen.add(x.ptr)
        b = heap.get(x.ptr)
        if b is not None:
            todo.extend(tainted_values(b))
    return PUBLIC


# ---------------------------------------------------------------------------
# canonical keys


def _roots(psi: Config) -> list:
    vals = []

    def stack_vals(st: Stack):
        for fr in st.frames:
            if isinstance(fr, Waiting):
                vals.append(fr.loc)
            else:
                vals.extend(fr.regs)
                vals.extend(fr.ctx)

    for f in psi.acts:
        vals.append(f.loc)
        stack_vals(f.stack)
        for i in f.pi:
            vals.extend(block_values(i))
        vals.extend(f.gamma)
    for t in psi.threads:
        vals.append(t.parent)
        vals.append(t.tloc)
        stack_vals(t.stack)
        for i in t.pi:
            vals.extend(block_values(i))
        vals.extend(t.gamma)
    for k in sorted(psi.statics):
        vals.append(psi.statics[k])
    return vals


def reachable_ptrs(psi: Config) -> list:
    """Pointers reachable from the configuration roots, in first-visit order."""
    order, seen = [], set()
    todo = deque(v for v in _roots(psi) if isinstance(v, Loc))
    while todo:
        x = todo.popleft()
        if x.ptr in seen:
            continue
        seen.add(x.ptr)
        order.append(x.ptr)
        b = psi.heap.get(x.ptr)
        if b is not None:
            todo.extend(v for v in block_values(b) if isinstance(v, Loc))
    return order


def canonical_key(psi: Config, extra=None) -> tuple:
    """Hashable key identifying ``psi`` up to pointer renaming (garbage ignored)."""
    order = reachable_ptrs(psi)
    ren = {p: i for i, p in enumerate(order)}

    def cv(v):
        if isinstance(v, Loc):
            return ("L", ren.get(v.ptr, -1), v.label)
        return v

    def cb(b):
        if isinstance(b, Obj):
            return ("O", b.cls, tuple(cv(x) for x in b.vals))
        if isinstance(b, Arr):
            return ("A", b.elem, tuple(cv(x) for x in b.vals))
        return ("I", b.cls, tuple((cv(k), cv(x)) for k, x in b.extras))

    def cs(st: Stack):
        fr = []
        for f in st.frames:
            if isinstance(f, Waiting):
                fr.append(("W", cv(f.loc), f.count))
            else:
                fr.append((f.cls, f.meth, f.pc, tuple(cv(x) for x in f.regs), tuple(cv(x) for x in f.ctx)))
        return (tuple(fr), st.abnormal)

    acts = tuple((cv(f.loc), f.state, tuple(cb(i) for i in f.pi), tuple(cv(x) for x in f.gamma), cs(f.stack), f.active)
                 for f in psi.acts)
    threads = tuple((cv(t.parent), cv(t.tloc), tuple(cb(i) for i in t.pi), tuple(cv(x) for x in t.gamma), cs(t.stack))
                    for t in psi.threads)
    heap = tuple(cb(psi.heap[p]) for p in order if p in psi.heap)
    mons = tuple(sorted((ren[p], ren.get(o, -1), c) for p, (o, c) in psi.monitors.items() if p in ren and c))
    stat = tuple(sorted((k, cv(v)) for k, v in psi.statics.items()))
    return (acts, threads, heap, mons, stat, extra)


# ---------------------------------------------------------------------------
# exploration


@dataclass
class Witness:
    sink: tuple
    register: int
    arg_index: int
    trace: list

    def as_dict(self) -> dict:
        return {"sink": f"{self.sink[0]}.{self.sink[1]}", "register": f"r{self.register}",
                "argument": self.arg_index, "trace": [" | ".join(str(x) for x in t) for t in self.trace]}


@dataclass
class ExploreResult:
    configs: list
    witnesses: list
    exhausted: bool
    transitions: int = 0
    parents: list = field(default_factory=list)

    def trace_to(self, idx: int) -> list:
        out = []
        while idx >= 0 and self.parents[idx] is not None:
            parent, step = self.parents[idx]
            out.append(step)
            idx = parent
        return list(reversed(out))


def _fmt_pp(pp) -> str:
    if pp is None:
        return "-"
    c, m, pc = pp
    return f"{c}.{m}:{pc}"


def sink_hits(interp: Interpreter, psi: Config) -> list:
    """``(sink, register, arg-index)`` for sink entry states holding secret arguments."""
    out = []
    sinks = interp.cfg.sinks
    if not sinks:
        return out
    stacks = [f.stack for f in psi.acts] + [t.stack for t in psi.threads]
    for st in stacks:
        for fr in st.frames:
            if isinstance(fr, LocalState) and fr.pc == 0 and (fr.cls, fr.meth) in sinks:
                md = interp.method(fr.cls, fr.meth)
                first = md.locals + (0 if md.static else 1)
                for j, r in enumerate(range(first, md.nregs)):
                    if taint_of(psi.heap, fr.regs[r]) == SECRET:
                        out.append(((fr.cls, fr.meth), r, j))
    return out


def explore(program: Program, cfg: AnalysisConfig, model: Optional[LifecycleModel] = None,
            max_configs: int = 5000, seed: int = 0, schedule: Iterable[str] = (),
            keep_configs: bool = True) -> ExploreResult:
    """Breadth-first exploration of the global reduction relation.

    ``seed`` only permutes the order in which successors of one configuration
    are queued; the reached set within budget is seed independent when the
    budget is not exhausted.  With a ``schedule`` (callback names) leak
    witnesses are only reported once the invoked callbacks contain it as a
    subsequence.
    """
    import random

    rng = random.Random(seed)
    interp = Interpreter(program, cfg, model)
    sched = tuple(schedule)
    configs: list = []
    parents: list = []
    witnesses: dict = {}
    seen = set()
    queue: deque = deque()
    exhausted = False
    transitions = 0

    def add(psi, prog_idx, parent, step):
        nonlocal exhausted
        key = canonical_key(psi, prog_idx if sched else None)
        if key in seen:
            return
        if len(configs) >= max_configs:
            exhausted = True
            return
        seen.add(key)
        idx = len(configs)
        configs.append(psi)
        parents.append(None if parent is None else (parent, step))
        queue.append((idx, prog_idx))
        if not sched or prog_idx == len(sched):
            for sink, reg, j in sink_hits(interp, psi):
                if (sink, j) not in witnesses:
                    witnesses[(sink, j)] = (sink, reg, j, idx)

    for m, psi in interp.initial_configs():
        prog = 1 if sched and m == sched[0] else 0
        add(psi, prog, None, None)
    if max_configs <= 1 and configs:
        exhausted = True
    while queue:
        idx, prog = queue.popleft()
        succ = interp.step_global(configs[idx])
        if seed:
            rng.shuffle(succ)
        for rule, fid, pp, cbname, psi2 in succ:
            transitions += 1
            p2 = prog
            if sched and prog < len(sched) and cbname == sched[prog]:
                p2 = prog + 1
            add(psi2, p2, idx, (rule, fid, _fmt_pp(pp) if pp else (cbname or "-")))
    res = ExploreResult(configs if keep_configs else [], [], exhausted, transitions, parents)
    for (sink, j), (_s, reg, _j, idx) in sorted(witnesses.items()):
        res.witnesses.append(Witness(sink, reg, j, res.trace_to(idx)))
    return res
