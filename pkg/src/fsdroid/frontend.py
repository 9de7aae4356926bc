"""Parsing, validation and class-hierarchy queries for the assembly format.

A program file is line oriented::

    .class public Leaky
    .super Activity
    .field st:Storage
    .method constructor <init>()
    .1 local register
        new r0 Storage
        move r1.st r0
    .end method

Registers are resolved to integer indices at parse time.  With ``n`` locals,
``k`` declared arguments and a receiver (instance methods only) the register
file is ``r0 .. r{N-1}, ret, excpt`` where ``N = n + receiver + k``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Union

PRIM_TYPES = ("int", "bool", "String")
VOID = "void"
BUILTIN_CLASSES = ("Object", "Activity", "Thread", "Throwable", "IntExcpt", "Intent")

# special fields injected into built-in classes; subclasses inherit them
_BUILTIN_FIELDS = {
    "Activity": (("finished", "bool"), ("intent", "Intent"), ("result", "Object"), ("parent", "Activity")),
    "Thread": (("inte", "bool"), ("finished", "bool")),
}
_BUILTIN_SUPER = {
    "Object": None,
    "Activity": "Object",
    "Thread": "Object",
    "Throwable": "Object",
    "IntExcpt": "Throwable",
    "Intent": "Object",
}


class ParseError(Exception):
    """Syntax or well-formedness error with a source position."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}" if line else message)

    def as_dict(self) -> dict:
        return {"error": self.message, "line": self.line, "column": self.column}


# ---------------------------------------------------------------------------
# operands


@dataclass(frozen=True)
class Lit:
    """A literal primitive; ``kind`` is one of int/bool/String."""

    kind: str
    value: Union[int, bool, str]


@dataclass(frozen=True)
class Reg:
    index: int


@dataclass(frozen=True)
class ArrCell:
    array: int
    index: int


@dataclass(frozen=True)
class FieldRef:
    obj: int
    name: str


@dataclass(frozen=True)
class StaticRef:
    cls: str
    name: str


Rhs = Union[Lit, Reg, ArrCell, FieldRef, StaticRef]
Lhs = Union[Reg, ArrCell, FieldRef, StaticRef]

BINOPS = ("add", "sub", "mul", "div", "rem", "and", "or", "xor")
UNOPS = ("neg", "not")
COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")

# op -> operand shape; r = register, t = type, c = class, n = pc, m = method
_SHAPES = {
    "goto": "n",
    "new": "rc",
    "newarray": "rrt",
    "newintent": "rc",
    "put-extra": "rrr",
    "get-extra": "rrt",
    "start-activity": "r",
    "return": "",
    "throw": "r",
    "move-exception": "r",
    "start-thread": "r",
    "interrupt": "r",
    "interrupted": "r",
    "is-interrupted": "r",
    "join": "r",
    "wait": "r",
    "monitor-enter": "r",
    "monitor-exit": "r",
    "checkcast": "rt",
    "instanceof": "rrt",
}
STATEMENT_FORMS = tuple(sorted(set(_SHAPES) | {"if", "move", "unop", "binop", "invoke", "sinvoke"}))


@dataclass(frozen=True)
class Statement:
    """One instruction.  ``args`` layout depends on ``op``:

    goto (target,) | if (a, cmp, b, target) | move (lhs, rhs) | unop (dst, op, src)
    binop (dst, op, a, b) | invoke (recv, method, argregs) | sinvoke (cls, method, argregs)
    everything else follows the operand shape table.
    """

    op: str
    args: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class CatchEntry:
    start: int
    end: int  # inclusive
    cls: str
    handler: int


@dataclass
class MethodDef:
    name: str
    arg_types: tuple
    ret_type: str
    locals: int
    body: list
    excpt_table: list
    static: bool = False
    modifiers: tuple = ()
    line: int = field(default=0, compare=False)

    @property
    def nregs(self) -> int:
        """Number of numbered registers (locals, receiver, arguments)."""
        return self.locals + (0 if self.static else 1) + len(self.arg_types)

    @property
    def ret_reg(self) -> int:
        return self.nregs

    @property
    def excpt_reg(self) -> int:
        return self.nregs + 1

    @property
    def width(self) -> int:
        return self.nregs + 2

    @property
    def param_regs(self) -> range:
        """Receiver (if any) followed by declared arguments."""
        return range(self.locals, self.nregs)

    def reg_name(self, i: int) -> str:
        if i == self.ret_reg:
            return "ret"
        if i == self.excpt_reg:
            return "excpt"
        return f"r{i}"

    def __eq__(self, other):
        if not isinstance(other, MethodDef):
            return NotImplemented
        return (self.name, self.arg_types, self.ret_type, self.locals, self.body, self.excpt_table, self.static) == (
            other.name, other.arg_types, other.ret_type, other.locals, other.body, other.excpt_table, other.static)


@dataclass
class ClassDef:
    name: str
    super: Optional[str]
    interfaces: list
    fields: list  # (name, type)
    methods: list
    static_fields: list = field(default_factory=list)
    modifiers: tuple = ()
    builtin: bool = False

    def method(self, name: str) -> Optional[MethodDef]:
        for m in self.methods:
            if m.name == name:
                return m
        return None


@dataclass
class AnalysisConfig:
    sources: frozenset = frozenset()
    sinks: frozenset = frozenset()
    entry_activities: tuple = ()

    def validate(self, program: "Program") -> None:
        for c, _m in sorted(self.sources | self.sinks):
            if c not in program.class_map:
                raise ParseError(f"sources/sinks mention unknown class {c}")
        for c in self.entry_activities:
            if c not in program.class_map:
                raise ParseError(f"unknown entry activity {c}")


# ---------------------------------------------------------------------------
# program and hierarchy queries


class Program:
    """Parsed program plus built-in classes and derived indices."""

    def __init__(self, classes: list):
        self.classes = classes
        self.class_map: dict = {}
        for b in _builtin_classes():
            self.class_map[b.name] = b
        for c in classes:
            if c.name in self.class_map:
                raise ParseError(f"duplicate class {c.name}")
            self.class_map[c.name] = c
        for c in classes:
            for parent in [c.super, *c.interfaces]:
                if parent is not None and parent not in self.class_map:
                    raise ParseError(f"class {c.name} refers to undeclared class {parent}")
        self._check_acyclic()
        self._field_cache: dict = {}
        self._sub_cache: dict = {}
        self._lookup_cache: dict = {}
        self.sites = self._collect_sites()
        self.site_index = {pp: i for i, pp in enumerate(self.sites)}

    def __eq__(self, other):
        return isinstance(other, Program) and self.classes == other.classes

    def _check_acyclic(self) -> None:
        for c in self.class_map:
            seen = set()
            cur: Optional[str] = c
            while cur is not None:
                if cur in seen:
                    raise ParseError(f"cyclic inheritance through {cur}")
                seen.add(cur)
                cur = self.class_map[cur].super

    def _collect_sites(self) -> tuple:
        out = []
        for pp, st in self.statements():
            if st.op in ("new", "newarray", "newintent"):
                out.append(pp)
        return tuple(out)

    def statements(self) -> Iterator[tuple]:
        for c in self.classes:
            for m in c.methods:
                for pc, st in enumerate(m.body):
                    yield (c.name, m.name, pc), st

    def method_at(self, cls: str, name: str) -> MethodDef:
        m = self.class_map[cls].method(name)
        if m is None:
            raise KeyError(f"{cls}.{name}")
        return m

    def statement(self, pp: tuple) -> Statement:
        c, m, pc = pp
        return self.method_at(c, m).body[pc]

    # hierarchy -------------------------------------------------------------

    def supertypes(self, c: str) -> frozenset:
        hit = self._sub_cache.get(c)
        if hit is not None:
            return hit
        out = {c}
        cd = self.class_map.get(c)
        if cd is not None:
            for p in [cd.super, *cd.interfaces]:
                if p is not None:
                    out |= self.supertypes(p)
        res = frozenset(out)
        self._sub_cache[c] = res
        return res

    def is_subclass(self, c: str, d: str) -> bool:
        return d in self.supertypes(c)

    def subtype(self, t: str, u: str) -> bool:
        if t == u:
            return True
        if t.endswith("[]") and u.endswith("[]"):
            return self.subtype(t[:-2], u[:-2])
        if t.endswith("[]") or u.endswith("[]") or t in PRIM_TYPES or u in PRIM_TYPES:
            return False
        return self.is_subclass(t, u)

    def is_activity(self, c: str) -> bool:
        return c in self.class_map and self.is_subclass(c, "Activity")

    def is_thread(self, c: str) -> bool:
        return c in self.class_map and self.is_subclass(c, "Thread")

    def activity_classes(self) -> list:
        return [c.name for c in self.classes if self.is_activity(c.name)]

    def all_fields(self, c: str) -> tuple:
        """Declared plus inherited instance fields, superclass fields first."""
        hit = self._field_cache.get(c)
        if hit is not None:
            return hit
        cd = self.class_map[c]
        inherited = self.all_fields(cd.super) if cd.super is not None else ()
        own = tuple((f, t) for f, t in cd.fields if f not in dict(inherited))
        res = inherited + own
        self._field_cache[c] = res
        return res

    def static_fields(self) -> list:
        out = []
        for c in self.classes:
            for f, t in c.static_fields:
                out.append((c.name, f, t))
        return out

    def lookup(self, c: str, m: str) -> tuple:
        """Dispatch: walk superclasses of ``c`` for a definition of ``m``."""
        key = (c, m)
        if key in self._lookup_cache:
            return self._lookup_cache[key]
        cur: Optional[str] = c
        while cur is not None:
            cd = self.class_map.get(cur)
            if cd is None:
                break
            md = cd.method(m)
            if md is not None:
                self._lookup_cache[key] = (cur, md.body)
                return cur, md.body
            cur = cd.super
        raise LookupError(f"method {m} not found from class {c}")

    def try_lookup(self, c: str, m: str) -> Optional[str]:
        try:
            return self.lookup(c, m)[0]
        except LookupError:
            return None

    def defining_classes(self, m: str) -> list:
        """Classes that declare a method named ``m``."""
        return [c.name for c in self.classes if c.method(m) is not None]

    def excpt_handler(self, pp: tuple, exc_cls: str) -> Optional[int]:
        c, m, pc = pp
        md = self.method_at(c, m)
        for e in md.excpt_table:
            if e.start <= pc <= e.end and self.is_subclass(exc_cls, e.cls):
                return e.handler
        return None


def _builtin_classes() -> list:
    out = []
    for name in BUILTIN_CLASSES:
        flds = [tuple(x) for x in _BUILTIN_FIELDS.get(name, ())]
        out.append(ClassDef(name, _BUILTIN_SUPER[name], [], flds, [], builtin=True))
    return out


def subtype(program: Program, t: str, u: str) -> bool:
    return program.subtype(t, u)


def lookup(program: Program, c: str, m: str) -> tuple:
    return program.lookup(c, m)


def excpt_handler(program: Program, pp: tuple, c: str) -> Optional[int]:
    return program.excpt_handler(pp, c)


def is_reference_type(t: str) -> bool:
    return t not in PRIM_TYPES and t != VOID


# ---------------------------------------------------------------------------
# parser

_REG_RE = re.compile(r"^(r\d+|ret|excpt)$")
_IDENT = r"[A-Za-z_<$][\w<>$]*"
_TYPE_RE = re.compile(rf"^{_IDENT}(\[\])*$")
_METHOD_RE = re.compile(rf"^\.method\s+((?:[\w-]+\s+)*)({_IDENT})\s*\(([^)]*)\)\s*(?::\s*(\S+))?\s*$")
_LOCALS_RE = re.compile(r"^\.(\d+)\s+local\s+registers?$|^\.locals\s+(\d+)$")
_INT_RE = re.compile(r"^-?\d+$")


class _MethodBuilder:
    def __init__(self, name, arg_types, ret_type, static, modifiers, line):
        self.name = name
        self.arg_types = arg_types
        self.ret_type = ret_type
        self.static = static
        self.modifiers = modifiers
        self.line = line
        self.locals: Optional[int] = None
        self.raw: list = []  # (tokens, line, col)
        self.catches: list = []


def _split_operands(text: str, lineno: int) -> list:
    """Whitespace split that keeps double-quoted strings intact."""
    out, i, n = [], 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    j += 1
                buf.append(text[j])
                j += 1
            if j >= n:
                raise ParseError("unterminated string literal", lineno, i + 1)
            out.append(('"' + "".join(buf) + '"', i + 1))
            i = j + 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        out.append((text[i:j], i + 1))
        i = j
    return out


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def parse_program(text: str) -> Program:
    """Parse the assembly format; raises :class:`ParseError` on failure."""
    classes: list = []
    cur: Optional[ClassDef] = None
    meth: Optional[_MethodBuilder] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        col = raw.find(line[0]) + 1
        if line.startswith("."):
            head = line.split()[0]
            if meth is not None and head not in (".end", ".catch") and not _LOCALS_RE.match(line):
                raise ParseError(f"directive {head} inside a method body", lineno, col)
            if head == ".class":
                parts = line.split()
                if len(parts) < 2:
                    raise ParseError("missing class name", lineno, col)
                cur = ClassDef(parts[-1], "Object", [], [], [], modifiers=tuple(parts[1:-1]))
                classes.append(cur)
            elif head == ".super":
                _need(cur, lineno, col).super = _one_arg(line, lineno, col)
            elif head == ".implements":
                _need(cur, lineno, col).interfaces.append(_one_arg(line, lineno, col))
            elif head == ".field":
                c = _need(cur, lineno, col)
                parts = line.split()[1:]
                static = "static" in parts[:-1]
                if not parts or ":" not in parts[-1]:
                    raise ParseError("field must be written name:Type", lineno, col)
                fname, ftype = parts[-1].split(":", 1)
                if not _TYPE_RE.match(ftype):
                    raise ParseError(f"bad type {ftype}", lineno, col)
                names = [f for f, _ in c.fields] + [f for f, _ in c.static_fields]
                if fname in names:
                    raise ParseError(f"duplicate field {fname} in {c.name}", lineno, col)
                (c.static_fields if static else c.fields).append((fname, ftype))
            elif head == ".method":
                c = _need(cur, lineno, col)
                mm = _METHOD_RE.match(line)
                if not mm:
                    raise ParseError("malformed method header", lineno, col)
                mods = tuple(mm.group(1).split())
                args = tuple(a.strip() for a in mm.group(3).split(",") if a.strip())
                for a in args:
                    if not _TYPE_RE.match(a):
                        raise ParseError(f"bad argument type {a}", lineno, col)
                if c.method(mm.group(2)) is not None:
                    raise ParseError(f"duplicate method {mm.group(2)} in {c.name}", lineno, col)
                meth = _MethodBuilder(mm.group(2), args, mm.group(4) or VOID, "static" in mods, mods, lineno)
            elif _LOCALS_RE.match(line):
                if meth is None:
                    raise ParseError("register count outside a method", lineno, col)
                g = _LOCALS_RE.match(line)
                meth.locals = int(g.group(1) or g.group(2))
            elif head == ".catch":
                if meth is None:
                    raise ParseError(".catch outside a method", lineno, col)
                parts = line.split()
                if len(parts) != 5 or not all(_INT_RE.match(p) for p in parts[2:]):
                    raise ParseError(".catch Class from to handler", lineno, col)
                meth.catches.append(CatchEntry(int(parts[2]), int(parts[3]), parts[1], int(parts[4])))
            elif head == ".end":
                if meth is None:
                    raise ParseError(".end without .method", lineno, col)
                _need(cur, lineno, col).methods.append(_finish_method(meth, lineno))
                meth = None
            else:
                raise ParseError(f"unknown directive {head}", lineno, col)
            continue
        if meth is None:
            raise ParseError("statement outside a method", lineno, col)
        meth.raw.append((_split_operands(line, lineno), lineno, col))
    if meth is not None:
        raise ParseError(f"method {meth.name} is not closed", meth.line, 1)
    prog = Program(classes)
    _validate(prog)
    return prog


def _need(cur, lineno, col):
    if cur is None:
        raise ParseError("directive outside a class", lineno, col)
    return cur


def _one_arg(line, lineno, col) -> str:
    parts = line.split()
    if len(parts) != 2:
        raise ParseError(f"{parts[0]} takes one name", lineno, col)
    return parts[1]


def _finish_method(mb: _MethodBuilder, end_line: int = 0) -> MethodDef:
    locs = mb.locals if mb.locals is not None else 0
    md = MethodDef(mb.name, mb.arg_types, mb.ret_type, locs, [], list(mb.catches), mb.static, mb.modifiers, mb.line)
    nregs = md.nregs

    def reg(tok, lineno, col) -> int:
        if not _REG_RE.match(tok):
            raise ParseError(f"expected register, got {tok!r}", lineno, col)
        if tok == "ret":
            return nregs
        if tok == "excpt":
            return nregs + 1
        i = int(tok[1:])
        if i >= nregs:
            raise ParseError(f"register {tok} out of range (method has {nregs})", lineno, col)
        return i

    for toks, lineno, col in mb.raw:
        md.body.append(_parse_statement(toks, lineno, col, reg))
    # bodies may fall off the end; that behaves like a trailing return
    if not md.body or md.body[-1].op not in ("return", "goto", "throw"):
        md.body.append(Statement("return", (), end_line))
    return md


def _parse_lit(tok: str) -> Optional[Lit]:
    if tok.startswith('"'):
        return Lit("String", tok[1:-1])
    if tok in ("true", "false"):
        return Lit("bool", tok == "true")
    if _INT_RE.match(tok):
        return Lit("int", int(tok))
    return None


def _parse_ref(tok: str, lineno: int, col: int, reg, allow_lit: bool):
    lit = _parse_lit(tok)
    if lit is not None:
        if not allow_lit:
            raise ParseError("literal on the left of a move", lineno, col)
        return lit
    m = re.match(r"^(\w+)\[(\w+)\]$", tok)
    if m:
        return ArrCell(reg(m.group(1), lineno, col), reg(m.group(2), lineno, col))
    if "." in tok:
        base, name = tok.split(".", 1)
        if _REG_RE.match(base):
            return FieldRef(reg(base, lineno, col), name)
        return StaticRef(base, name)
    return Reg(reg(tok, lineno, col))


def _parse_statement(toks: list, lineno: int, col: int, reg) -> Statement:
    op = toks[0][0]
    rest = toks[1:]
    words = [t for t, _ in rest]

    def at(i):
        return rest[i][1] if i < len(rest) else col

    def arity(n):
        if len(words) != n:
            raise ParseError(f"{op} expects {n} operands", lineno, col)

    if op == "move":
        arity(2)
        lhs = _parse_ref(words[0], lineno, at(0), reg, allow_lit=False)
        rhs = _parse_ref(words[1], lineno, at(1), reg, allow_lit=True)
        return Statement("move", (lhs, rhs), lineno)
    if op == "if":
        # if ra <cmp> rb goto N
        if len(words) != 5 or words[3] != "goto":
            raise ParseError("if ra <cmp> rb goto N", lineno, col)
        if words[1] not in COMPARISONS:
            raise ParseError(f"unknown comparison {words[1]}", lineno, at(1))
        return Statement("if", (reg(words[0], lineno, at(0)), words[1], reg(words[2], lineno, at(2)), _pc(words[4], lineno, at(4))), lineno)
    if op == "unop":
        arity(3)
        if words[1] not in UNOPS:
            raise ParseError(f"unknown unary operator {words[1]}", lineno, at(1))
        return Statement("unop", (reg(words[0], lineno, at(0)), words[1], reg(words[2], lineno, at(2))), lineno)
    if op == "binop":
        arity(4)
        if words[1] not in BINOPS:
            raise ParseError(f"unknown binary operator {words[1]}", lineno, at(1))
        return Statement("binop", (reg(words[0], lineno, at(0)), words[1], reg(words[2], lineno, at(2)), reg(words[3], lineno, at(3))), lineno)
    if op in ("invoke", "sinvoke"):
        if len(words) < 2 or not words[1].endswith("()"):
            raise ParseError(f"{op} <target> name() args...", lineno, col)
        name = words[1][:-2]
        args = tuple(reg(w, lineno, at(i + 2)) for i, w in enumerate(words[2:]))
        target = reg(words[0], lineno, at(0)) if op == "invoke" else words[0]
        return Statement(op, (target, name, args), lineno)
    shape = _SHAPES.get(op)
    if shape is None:
        raise ParseError(f"unknown statement {op}", lineno, col)
    arity(len(shape))
    out = []
    for i, (kind, w) in enumerate(zip(shape, words)):
        if kind == "r":
            out.append(reg(w, lineno, at(i)))
        elif kind == "n":
            out.append(_pc(w, lineno, at(i)))
        else:
            if not _TYPE_RE.match(w):
                raise ParseError(f"bad type {w}", lineno, at(i))
            out.append(w)
    return Statement(op, tuple(out), lineno)


def _pc(tok, lineno, col) -> int:
    if not _INT_RE.match(tok):
        raise ParseError(f"expected a pc, got {tok!r}", lineno, col)
    return int(tok)


def _validate(prog: Program) -> None:
    for c in prog.classes:
        for m in c.methods:
            n = len(m.body)
            for pc, st in enumerate(m.body):
                tgt = None
                if st.op == "goto":
                    tgt = st.args[0]
                elif st.op == "if":
                    tgt = st.args[3]
                if tgt is not None and not 0 <= tgt < n:
                    raise ParseError(f"jump target {tgt} out of range in {c.name}.{m.name}", st.line, 1)
            for e in m.excpt_table:
                if not 0 <= e.handler < n or e.start > e.end:
                    raise ParseError(f"bad .catch entry in {c.name}.{m.name}", m.line, 1)
                if e.cls not in prog.class_map or not prog.is_subclass(e.cls, "Throwable"):
                    raise ParseError(f"handler class {e.cls} is not a Throwable", m.line, 1)


# ---------------------------------------------------------------------------
# printer


def _fmt_lit(lit: Lit) -> str:
    if lit.kind == "String":
        return '"' + str(lit.value).replace("\\", "\\\\").replace('"', '\\"') + '"'
    if lit.kind == "bool":
        return "true" if lit.value else "false"
    return str(lit.value)


def format_operand(x, md: MethodDef) -> str:
    if isinstance(x, Lit):
        return _fmt_lit(x)
    if isinstance(x, Reg):
        return md.reg_name(x.index)
    if isinstance(x, ArrCell):
        return f"{md.reg_name(x.array)}[{md.reg_name(x.index)}]"
    if isinstance(x, FieldRef):
        return f"{md.reg_name(x.obj)}.{x.name}"
    if isinstance(x, StaticRef):
        return f"{x.cls}.{x.name}"
    raise TypeError(x)


def format_statement(st: Statement, md: MethodDef) -> str:
    r = md.reg_name
    a = st.args
    if st.op == "move":
        return f"move {format_operand(a[0], md)} {format_operand(a[1], md)}"
    if st.op == "if":
        return f"if {r(a[0])} {a[1]} {r(a[2])} goto {a[3]}"
    if st.op == "unop":
        return f"unop {r(a[0])} {a[1]} {r(a[2])}"
    if st.op == "binop":
        return f"binop {r(a[0])} {a[1]} {r(a[2])} {r(a[3])}"
    if st.op in ("invoke", "sinvoke"):
        tgt = r(a[0]) if st.op == "invoke" else a[0]
        return " ".join([st.op, tgt, f"{a[1]}()"] + [r(x) for x in a[2]])
    shape = _SHAPES[st.op]
    parts = [st.op]
    for kind, x in zip(shape, a):
        parts.append(r(x) if kind == "r" else str(x))
    return " ".join(parts)


def print_program(prog: Program) -> str:
    lines = []
    for c in prog.classes:
        lines.append(" ".join([".class", *c.modifiers, c.name]))
        if c.super is not None:
            lines.append(f".super {c.super}")
        for i in c.interfaces:
            lines.append(f".implements {i}")
        for f, t in c.fields:
            lines.append(f".field {f}:{t}")
        for f, t in c.static_fields:
            lines.append(f".field static {f}:{t}")
        for m in c.methods:
            mods = list(m.modifiers)
            if m.static and "static" not in mods:
                mods.append("static")
            head = " ".join([".method", *mods, f"{m.name}({','.join(m.arg_types)})"])
            if m.ret_type != VOID:
                head += f":{m.ret_type}"
            lines.append(head)
            lines.append(f".{m.locals} local register" + ("" if m.locals == 1 else "s"))
            for st in m.body:
                lines.append("    " + format_statement(st, m))
            for e in m.excpt_table:
                lines.append(f".catch {e.cls} {e.start} {e.end} {e.handler}")
            lines.append(".end method")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# sources / sinks


def parse_sources_sinks(text: str, entry: Iterable[str] = ()) -> AnalysisConfig:
    """One ``Class method source|sink`` per line; ``Class entry`` marks an entry activity."""
    sources, sinks, entries = set(), set(), list(entry)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 2 and parts[1] == "entry":
            entries.append(parts[0])
            continue
        if len(parts) != 3 or parts[2] not in ("source", "sink"):
            raise ParseError("expected 'Class method source|sink'", lineno, 1)
        (sources if parts[2] == "source" else sinks).add((parts[0], parts[1]))
    return AnalysisConfig(frozenset(sources), frozenset(sinks), tuple(dict.fromkeys(entries)))


def default_entries(prog: Program, cfg: AnalysisConfig) -> AnalysisConfig:
    """Fill in entry activities when the config names none: the first activity class."""
    if cfg.entry_activities:
        return cfg
    acts = prog.activity_classes()
    return AnalysisConfig(cfg.sources, cfg.sinks, tuple(acts[:1]))
