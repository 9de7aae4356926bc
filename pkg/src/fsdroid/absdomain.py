"""Abstract values, blocks, heaps and filters, plus the lifting machinery.

Abstract value = (set of abstract locations, sign, flat bool, string flag, taint).
Locations are ``(label, fs)`` pairs: ``fs=True`` is the flow-sensitive
(most recent) abstraction of a program-point site, ``fs=False`` the summary.
Labels are program points ``(cls, method, pc)``, activity class names, or
``("in", cls)`` for delivered intents.

Heaps are tuples indexed by site number (``None`` is bottom).  Filters are
int bitmasks over the same numbering, so join is ``|``.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple, Optional

# sign lattice codes
S_BOT, S_NEG, S_ZERO, S_POS, S_TOP = 0, 1, 2, 3, 4
SIGN_NAMES = {S_BOT: "⊥", S_NEG: "-", S_ZERO: "0", S_POS: "+", S_TOP: "⊤"}
# bool lattice is the powerset of {tt, ff}
B_BOT, B_TT, B_FF, B_TOP = 0, 1, 2, 3
BOOL_NAMES = {B_BOT: "⊥", B_TT: "tt", B_FF: "ff", B_TOP: "⊤"}

PUBLIC, SECRET = 0, 1
TAINT_NAMES = ("public", "secret")

INT_MIN = -(1 << 63)
INT_MAX = (1 << 63) - 1


class AValue(NamedTuple):
    locs: frozenset
    sign: int = S_BOT
    bool: int = B_BOT
    str: int = 0
    taint: int = PUBLIC


BOTTOM = AValue(frozenset())


class ABlock(NamedTuple):
    """kind is obj / array / intent.  Arrays and intents keep one value in ``vals``."""

    kind: str
    cls: str
    names: tuple
    vals: tuple

    def field(self, name: str) -> AValue:
        return self.vals[self.names.index(name)]

    def has_field(self, name: str) -> bool:
        return name in self.names

    def set_field(self, name: str, v: AValue) -> "ABlock":
        i = self.names.index(name)
        return self._replace(vals=self.vals[:i] + (v,) + self.vals[i + 1:])

    @property
    def content(self) -> AValue:
        return self.vals[0]


def abs_obj(cls: str, fields: Iterable) -> ABlock:
    items = tuple(fields)
    return ABlock("obj", cls, tuple(f for f, _ in items), tuple(v for _, v in items))


def abs_array(elem: str, v: AValue) -> ABlock:
    return ABlock("array", elem, (), (v,))


def abs_intent(cls: str, v: AValue) -> ABlock:
    return ABlock("intent", cls, (), (v,))


def block_type(b: ABlock) -> str:
    """Abstract get-type: the class, ``T[]`` for arrays, ``Intent`` for intents."""
    if b.kind == "obj":
        return b.cls
    if b.kind == "array":
        return b.cls + "[]"
    return "Intent"


# ---------------------------------------------------------------------------
# component lattices


def sign_join(a: int, b: int) -> int:
    if a == b or b == S_BOT:
        return a
    if a == S_BOT:
        return b
    return S_TOP


def sign_meet(a: int, b: int) -> int:
    if a == b or b == S_TOP:
        return a
    if a == S_TOP:
        return b
    return S_BOT


def sign_leq(a: int, b: int) -> bool:
    return a == S_BOT or a == b or b == S_TOP


def sign_of(n: int) -> int:
    return S_NEG if n < 0 else (S_ZERO if n == 0 else S_POS)


# ---------------------------------------------------------------------------
# value lattice


def join(a: AValue, b: AValue) -> AValue:
    if a is b:
        return a
    return AValue(a.locs | b.locs, sign_join(a.sign, b.sign), a.bool | b.bool, a.str | b.str, a.taint | b.taint)


def meet(a: AValue, b: AValue) -> AValue:
    return AValue(a.locs & b.locs, sign_meet(a.sign, b.sign), a.bool & b.bool, a.str & b.str, a.taint & b.taint)


def leq(a: AValue, b: AValue) -> bool:
    return (a.taint <= b.taint and a.str <= b.str and (a.bool & ~b.bool) == 0
            and sign_leq(a.sign, b.sign) and a.locs <= b.locs)


def is_bottom(a: AValue) -> bool:
    return a == BOTTOM


def overlaps(a: AValue, b: AValue) -> bool:
    """``a ⊓ b`` is not bottom."""
    return meet(a, b) != BOTTOM


def join_all(vals: Iterable[AValue]) -> AValue:
    out = BOTTOM
    for v in vals:
        out = join(out, v)
    return out


def top_prim(taint: int = SECRET) -> AValue:
    return AValue(frozenset(), S_TOP, B_TOP, 1, taint)


def with_taint(v: AValue, t: int) -> AValue:
    return v._replace(taint=t)


def prim_part(v: AValue) -> AValue:
    return v._replace(locs=frozenset())


# flow-insensitive preorder: FS(pp) and NFS(pp) identified


def collapse(v: AValue) -> AValue:
    if not any(fs for _, fs in v.locs):
        return v
    return v._replace(locs=frozenset((lab, False) for lab, _ in v.locs))


def leq_nfs(a: AValue, b: AValue) -> bool:
    return leq(collapse(a), collapse(b))


# ---------------------------------------------------------------------------
# blocks


def block_join(a: ABlock, b: ABlock) -> ABlock:
    if a.kind != b.kind or a.cls != b.cls or a.names != b.names:
        raise ValueError("joining incompatible blocks")
    return a._replace(vals=tuple(join(x, y) for x, y in zip(a.vals, b.vals)))


def block_leq(a: ABlock, b: ABlock) -> bool:
    return (a.kind == b.kind and a.cls == b.cls and a.names == b.names
            and all(leq(x, y) for x, y in zip(a.vals, b.vals)))


def block_leq_nfs(a: ABlock, b: ABlock) -> bool:
    return (a.kind == b.kind and a.cls == b.cls and a.names == b.names
            and all(leq_nfs(x, y) for x, y in zip(a.vals, b.vals)))


def block_map(b: ABlock, fn) -> ABlock:
    return b._replace(vals=tuple(fn(v) for v in b.vals))


def block_collapse(b: ABlock) -> ABlock:
    return block_map(b, collapse)


# ---------------------------------------------------------------------------
# operators (64-bit wrapping integers: any possible overflow yields ⊤)

_SIGN_RANGE = {S_NEG: (INT_MIN, -1), S_ZERO: (0, 0), S_POS: (1, INT_MAX), S_TOP: (INT_MIN, INT_MAX)}


def _ranges(s: int) -> list:
    if s == S_BOT:
        return []
    return [_SIGN_RANGE[s]]


def _sign_of_range(lo: int, hi: int) -> int:
    if lo < INT_MIN or hi > INT_MAX:
        return S_TOP
    if lo > 0:
        return S_POS
    if hi < 0:
        return S_NEG
    if lo == 0 and hi == 0:
        return S_ZERO
    return S_TOP


def _tdiv(x: int, y: int) -> int:
    q = abs(x) // abs(y)
    return q if (x >= 0) == (y > 0) else -q


def _sign_arith(op: str, a: int, b: int) -> int:
    if a == S_BOT or b == S_BOT:
        return S_BOT
    (alo, ahi), (blo, bhi) = _SIGN_RANGE[a], _SIGN_RANGE[b]
    if op == "add":
        return _sign_of_range(alo + blo, ahi + bhi)
    if op == "sub":
        return _sign_of_range(alo - bhi, ahi - blo)
    if op == "mul":
        corners = [alo * blo, alo * bhi, ahi * blo, ahi * bhi]
        return _sign_of_range(min(corners), max(corners))
    if op in ("div", "rem"):
        # divisor ranges with zero removed; a zero divisor is stuck
        divs = [(lo, hi) for lo, hi in ((blo, min(bhi, -1)), (max(blo, 1), bhi)) if lo <= hi]
        if not divs:
            return S_BOT
        if a == S_ZERO:
            return S_ZERO
        if op == "rem":
            return S_TOP
        out = S_BOT
        for lo, hi in divs:
            qs = [_tdiv(x, y) for x in (alo, ahi) for y in (lo, hi)]
            out = sign_join(out, _sign_of_range(min(qs), max(qs)))
        return out
    raise ValueError(op)


def _bool_apply(op: str, a: int, b: int) -> int:
    out = 0
    for x in (True, False):
        if not a & (B_TT if x else B_FF):
            continue
        for y in (True, False):
            if not b & (B_TT if y else B_FF):
                continue
            r = {"and": x and y, "or": x or y, "xor": x != y}[op]
            out |= B_TT if r else B_FF
    return out


def abs_binop(op: str, a: AValue, b: AValue) -> AValue:
    t = a.taint | b.taint
    if op in ("add", "sub", "mul", "div", "rem"):
        return AValue(frozenset(), _sign_arith(op, a.sign, b.sign), B_BOT, 0, t)
    if op in ("and", "or", "xor"):
        return AValue(frozenset(), S_BOT, _bool_apply(op, a.bool, b.bool), 0, t)
    raise ValueError(f"unknown operator {op}")


def abs_unop(op: str, a: AValue) -> AValue:
    if op == "neg":
        s = S_BOT if a.sign == S_BOT else _sign_of_range(-_SIGN_RANGE[a.sign][1], -_SIGN_RANGE[a.sign][0])
        return AValue(frozenset(), s, B_BOT, 0, a.taint)
    if op == "not":
        b = ((a.bool & B_TT) << 1) | ((a.bool & B_FF) >> 1)
        return AValue(frozenset(), S_BOT, b, 0, a.taint)
    raise ValueError(f"unknown operator {op}")


def abs_comp(cmp: str, a: AValue, b: AValue) -> tuple:
    """(may_true, may_false) for ``a cmp b``."""
    may_t = may_f = False
    for alo, ahi in _ranges(a.sign):
        for blo, bhi in _ranges(b.sign):
            if cmp in ("==", "!="):
                eq = alo <= bhi and blo <= ahi
                ne = not (alo == ahi == blo == bhi)
                t, f = (eq, ne) if cmp == "==" else (ne, eq)
            elif cmp == "<":
                t, f = alo < bhi, ahi >= blo
            elif cmp == "<=":
                t, f = alo <= bhi, ahi > blo
            elif cmp == ">":
                t, f = ahi > blo, alo <= bhi
            else:
                t, f = ahi >= blo, alo < bhi
            may_t |= t
            may_f |= f
    if cmp not in ("==", "!="):
        return may_t, may_f
    eq = ne = False
    if a.bool and b.bool:
        eq |= bool(a.bool & b.bool)
        ne |= not (a.bool == b.bool and a.bool in (B_TT, B_FF))
    if a.str and b.str:
        eq = ne = True
    if a.locs and b.locs:
        ne = True
        eq |= bool({lab for lab, _ in a.locs} & {lab for lab, _ in b.locs})
    kinds_a = _kinds(a)
    kinds_b = _kinds(b)
    if any(x != y for x in kinds_a for y in kinds_b):
        ne = True
    if cmp == "==":
        return may_t or eq, may_f or ne
    return may_t or ne, may_f or eq


def _kinds(v: AValue) -> set:
    out = set()
    if v.sign:
        out.add("int")
    if v.bool:
        out.add("bool")
    if v.str:
        out.add("String")
    if v.locs:
        out.add("loc")
    return out


# ---------------------------------------------------------------------------
# abstraction of primitives and defaults


def beta_prim(kind: str, payload, taint: int = PUBLIC) -> AValue:
    if kind == "int":
        return AValue(frozenset(), sign_of(payload), B_BOT, 0, taint)
    if kind == "bool":
        return AValue(frozenset(), S_BOT, B_TT if payload else B_FF, 0, taint)
    if kind == "String":
        return AValue(frozenset(), S_BOT, B_BOT, 1, taint)
    raise ValueError(kind)


def zero_of(t: str) -> AValue:
    """Abstraction of the concrete default for type ``t``; references default to int 0."""
    if t == "bool":
        return AValue(frozenset(), S_BOT, B_FF, 0, PUBLIC)
    if t == "String":
        return AValue(frozenset(), S_BOT, B_BOT, 1, PUBLIC)
    return AValue(frozenset(), S_ZERO, B_BOT, 0, PUBLIC)


# ---------------------------------------------------------------------------
# sites, filters, lifting


class SiteTable:
    """Numbering of flow-sensitive allocation sites."""

    def __init__(self, sites: Iterable):
        self.sites = tuple(sites)
        self.index = {pp: i for i, pp in enumerate(self.sites)}

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def all_ones(self) -> int:
        return (1 << len(self.sites)) - 1

    def empty_heap(self) -> tuple:
        return (None,) * len(self.sites)

    def filter_of(self, mapping: dict) -> int:
        k = 0
        for pp, bit in mapping.items():
            if bit:
                k |= 1 << self.index[pp]
        return k

    def filter_dict(self, k: int) -> dict:
        return {pp: (k >> i) & 1 for i, pp in enumerate(self.sites)}

    def heap_of(self, mapping: dict) -> tuple:
        h = [None] * len(self.sites)
        for pp, b in mapping.items():
            h[self.index[pp]] = b
        return tuple(h)


def join_filter(k1: int, k2: int) -> int:
    return k1 | k2


def lift_value(v: AValue, k: int, sites: SiteTable) -> AValue:
    if not k or not v.locs:
        return v
    idx = sites.index
    changed = False
    out = []
    for lab, fs in v.locs:
        if fs and (k >> idx[lab]) & 1:
            out.append((lab, False))
            changed = True
        else:
            out.append((lab, fs))
    return v._replace(locs=frozenset(out)) if changed else v


def lift_block(b: ABlock, k: int, sites: SiteTable) -> ABlock:
    if not k:
        return b
    return b._replace(vals=tuple(lift_value(v, k, sites) for v in b.vals))


def lift_heap(h: tuple, k: int, sites: SiteTable) -> tuple:
    if not k:
        return h
    out = []
    for i, b in enumerate(h):
        if (k >> i) & 1 or b is None:
            out.append(None)
        else:
            out.append(lift_block(b, k, sites))
    return tuple(out)


def lift_regs(regs: tuple, k: int, sites: SiteTable) -> tuple:
    if not k:
        return regs
    return tuple(lift_value(v, k, sites) for v in regs)


def fs_sites(v: AValue, sites: SiteTable) -> list:
    return [sites.index[lab] for lab, fs in v.locs if fs]


def heap_leq(h1: tuple, h2: tuple) -> bool:
    """Blockwise order: every defined entry of ``h1`` is below the one in ``h2``."""
    for a, b in zip(h1, h2):
        if a is None:
            continue
        if b is None or not block_leq(a, b):
            return False
    return True


# ---------------------------------------------------------------------------
# rendering


def render_label(lab) -> str:
    if isinstance(lab, tuple):
        if len(lab) == 2 and lab[0] == "in":
            return f"in({lab[1]})"
        c, m, pc = lab
        return f"{c}.{m}:{pc}"
    return str(lab)


def label_key(lab) -> tuple:
    if isinstance(lab, tuple):
        if len(lab) == 2:
            return (2, lab[1], "", 0)
        return (0, lab[0], lab[1], lab[2])
    return (1, lab, "", 0)


def render_value(v: AValue) -> str:
    if v == BOTTOM:
        return "⊥"
    parts = []
    for lab, fs in sorted(v.locs, key=lambda x: (label_key(x[0]), not x[1])):
        parts.append(("FS" if fs else "NFS") + "(" + render_label(lab) + ")")
    if v.sign:
        parts.append("int:" + SIGN_NAMES[v.sign])
    if v.bool:
        parts.append("bool:" + BOOL_NAMES[v.bool])
    if v.str:
        parts.append("str:⊤")
    body = " ⊔ ".join(parts) if parts else "⊥"
    return body + ("^secret" if v.taint else "")


def render_block(b: Optional[ABlock]) -> str:
    if b is None:
        return "⊥"
    if b.kind == "obj":
        inner = ", ".join(f"{n} ↦ {render_value(v)}" for n, v in zip(b.names, b.vals))
        return f"{b.cls}{{{inner}}}"
    if b.kind == "array":
        return f"array<{b.cls}>{{{render_value(b.content)}}}"
    return f"intent<{b.cls}>{{{render_value(b.content)}}}"


def render_heap(h: tuple, sites: SiteTable) -> str:
    return "[" + ", ".join(f"{render_label(pp)} ↦ {render_block(b)}" for pp, b in zip(sites.sites, h)) + "]"


def render_filter(k: int, sites: SiteTable) -> str:
    return "[" + ", ".join(f"{render_label(pp)} ↦ {(k >> i) & 1}" for i, pp in enumerate(sites.sites)) + "]"


def fs(lab) -> AValue:
    return AValue(frozenset({(lab, True)}))


def nfs(lab) -> AValue:
    return AValue(frozenset({(lab, False)}))
