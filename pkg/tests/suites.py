"""Seeded bulk checks shared by the unit tests and the acceptance script.

Each suite returns the list of failing cases so callers can report counts.
"""

import random
from collections import deque

from fsdroid import absdomain as ad
from fsdroid import concrete as cc
from fsdroid.clausegen import translate
from fsdroid.frontend import parse_program
from fsdroid.solver import derive_reach, derive_reach_iter, saturate
from fsdroid.soundness import RANDOM_CONFIG, beta_filter, random_program

LABELS = [("Ex", "m", i) for i in range(4)] + ["Act", ("in", "Act")]
SITES = ad.SiteTable(LABELS[:4])


def rand_value(rng: random.Random, labels=LABELS, sites=SITES) -> ad.AValue:
    locs = set()
    for lab in labels:
        if rng.random() < 0.3:
            locs.add((lab, False))
        if lab in sites.index and rng.random() < 0.3:
            locs.add((lab, True))
    return ad.AValue(frozenset(locs), rng.randrange(5), rng.randrange(4), rng.randrange(2), rng.randrange(2))


def rand_filter(rng: random.Random, sites=SITES) -> int:
    return rng.getrandbits(len(sites))


def _lattice_case(a, b, c) -> list:
    j, m, leq = ad.join, ad.meet, ad.leq
    bad = []
    checks = {
        "join-comm": j(a, b) == j(b, a),
        "meet-comm": m(a, b) == m(b, a),
        "join-assoc": j(j(a, b), c) == j(a, j(b, c)),
        "meet-assoc": m(m(a, b), c) == m(a, m(b, c)),
        "join-idem": j(a, a) == a,
        "meet-idem": m(a, a) == a,
        "absorb-1": j(a, m(a, b)) == a,
        "absorb-2": m(a, j(a, b)) == a,
        "bottom": j(ad.BOTTOM, a) == a and leq(ad.BOTTOM, a),
        "leq-refl": leq(a, a),
        "leq-antisym": not (leq(a, b) and leq(b, a)) or a == b,
        "leq-trans": not (leq(a, b) and leq(b, c)) or leq(a, c),
        "leq-join": leq(a, b) == (j(a, b) == b),
        "leq-meet": leq(a, b) == (m(a, b) == a),
        "join-upper": leq(a, j(a, b)) and leq(b, j(a, b)),
        "meet-lower": leq(m(a, b), a) and leq(m(a, b), b),
    }
    for name, ok in checks.items():
        if not ok:
            bad.append((name, a, b, c))
    return bad


def lattice_suite(n: int = 10_000, seed: int = 1) -> list:
    rng = random.Random(seed)
    bad = []
    for _ in range(n):
        bad += _lattice_case(rand_value(rng), rand_value(rng), rand_value(rng))
    return bad


def _lift_case(u, v, k, sites=SITES) -> list:
    lift = lambda x: ad.lift_value(x, k, sites)  # noqa: E731
    bad = []
    for lab, fs in u.locs:
        single = ad.AValue(frozenset({(lab, fs)}))
        out = lift(single)
        if fs and lab in sites.index:
            want = ad.nfs(lab) if (k >> sites.index[lab]) & 1 else ad.fs(lab)
        else:
            want = single
        if out != want:
            bad.append(("lift-location", lab, fs, k))
    if lift(ad.prim_part(u)) != ad.prim_part(u):
        bad.append(("lift-prim", u, k))
    if ad.leq(u, v) and not ad.leq(lift(u), lift(v)):
        bad.append(("lift-monotone", u, v, k))
    if lift(lift(u)) != lift(u):
        bad.append(("lift-idempotent", u, k))
    if ad.lift_regs((u, v), k, sites) != (lift(u), lift(v)):
        bad.append(("lift-pointwise", u, v, k))
    if ad.lift_value(u, 0, sites) != u:
        bad.append(("lift-zero", u))
    return bad


def lift_suite(n: int = 10_000, seed: int = 2) -> list:
    rng = random.Random(seed)
    bad = []
    for _ in range(n):
        u = rand_value(rng)
        # half the time v is built above u so the monotonicity premise is exercised
        v = ad.join(u, rand_value(rng)) if rng.random() < 0.5 else rand_value(rng)
        bad += _lift_case(u, v, rand_filter(rng))
    return bad


def filter_suite(n: int = 10_000, seed: int = 3) -> list:
    """Exactness of the filter abstraction plus the join-filter laws."""
    rng = random.Random(seed)
    bad = []
    for _ in range(n):
        def locset():
            return {cc.Loc(rng.randrange(20), rng.choice(LABELS)) for _ in range(rng.randrange(5))}
        lk, lk2 = locset(), locset()
        if beta_filter(lk | lk2, SITES) != ad.join_filter(beta_filter(lk, SITES), beta_filter(lk2, SITES)):
            bad.append(("exact", lk, lk2))
        k1, k2, k3 = rand_filter(rng), rand_filter(rng), rand_filter(rng)
        jf = ad.join_filter
        if not (jf(0, k1) == k1 and jf(k1, k2) == jf(k2, k1) and jf(jf(k1, k2), k3) == jf(k1, jf(k2, k3))
                and jf(k1, k1) == k1):
            bad.append(("join-filter", k1, k2, k3))
        d = SITES.filter_dict(jf(k1, k2))
        if d != {pp: max(a, b) for (pp, a), b in zip(SITES.filter_dict(k1).items(), SITES.filter_dict(k2).values())}:
            bad.append(("pointwise-max", k1, k2))
    return bad


_INTS = [cc.INT_MIN, cc.INT_MIN + 1, -(1 << 32), -7, -1, 0, 1, 2, 7, 1 << 32, (1 << 63) - 2, (1 << 63) - 1]


def _rand_prim(rng: random.Random, kind: str) -> cc.Prim:
    t = rng.randrange(2)
    if kind == "int":
        n = rng.choice(_INTS) if rng.random() < 0.5 else rng.randint(-1000, 1000)
        return cc.Prim("int", n, t)
    if kind == "bool":
        return cc.Prim("bool", rng.random() < 0.5, t)
    return cc.Prim("String", rng.choice(["", "a", "secret"]), t)


def _beta(p: cc.Prim) -> ad.AValue:
    return ad.beta_prim(p.kind, p.payload, p.taint)


def operator_suite(n: int = 10_000, seed: int = 4) -> list:
    """β(u op v) ⊑ op♯(β u, β v) on sampled concrete primitives; comparisons keep the taken branch."""
    rng = random.Random(seed)
    bad = []
    for _ in range(n):
        kind = rng.choice(["int", "int", "bool", "String"])
        x, y = _rand_prim(rng, kind), _rand_prim(rng, kind if rng.random() < 0.9 else "int")
        # abstract operands are sometimes widened, which must keep soundness
        ax = ad.join(_beta(x), rand_value(rng)) if rng.random() < 0.2 else _beta(x)
        ay = _beta(y)
        for op in ("add", "sub", "mul", "div", "rem", "and", "or", "xor"):
            r = cc.concrete_binop(op, x, y)
            if r is not None and not ad.leq(_beta(r), ad.abs_binop(op, ax, ay)):
                bad.append((op, x, y))
        for op in ("neg", "not"):
            r = cc.concrete_unop(op, x)
            if r is not None and not ad.leq(_beta(r), ad.abs_unop(op, ax)):
                bad.append((op, x))
        for cmp in ("==", "!=", "<", "<=", ">", ">="):
            r = cc.concrete_compare(cmp, x, y)
            if r is None:
                continue
            may_t, may_f = ad.abs_comp(cmp, ax, ay)
            if (r and not may_t) or (not r and not may_f):
                bad.append((cmp, x, y))
    return bad


# -- reachability ----------------------------------------------------------------


def random_heap(rng: random.Random, n_sites: int):
    labels = [("R", "m", i) for i in range(n_sites)]
    sites = ad.SiteTable(labels)
    pool = labels + ["Act"]

    def val():
        locs = set()
        for _ in range(rng.randrange(3)):
            lab = rng.choice(pool)
            locs.add((lab, lab != "Act" and rng.random() < 0.7))
        return ad.AValue(frozenset(locs), rng.randrange(5), 0, 0, rng.randrange(2))

    heap = []
    for _ in labels:
        if rng.random() < 0.2:
            heap.append(None)
        elif rng.random() < 0.5:
            heap.append(ad.abs_array("Object", val()))
        else:
            heap.append(ad.abs_obj("C", [(f"f{j}", val()) for j in range(rng.randrange(4))]))
    return sites, tuple(heap), val()


def bfs_reach(v, heap, sites) -> int:
    """Points-to graph search: FS edges only, starting from the FS locations of ``v``."""
    seen = set()
    queue = deque(lab for lab, fs in v.locs if fs)
    while queue:
        lab = queue.popleft()
        if lab in seen:
            continue
        seen.add(lab)
        blk = heap[sites.index[lab]]
        if blk is None:
            continue
        for u in blk.vals:
            queue.extend(l2 for l2, fs in u.locs if fs and l2 not in seen)
    return sites.filter_of({lab: 1 for lab in seen})


def reach_suite(n: int = 500, seed: int = 5, max_sites: int = 12) -> list:
    rng = random.Random(seed)
    bad = []
    for _ in range(n):
        sites, heap, v = random_heap(rng, rng.randint(1, max_sites))
        got, rounds = derive_reach_iter(v, heap, sites)
        if got != bfs_reach(v, heap, sites) or got != derive_reach(v, heap, sites):
            bad.append((sites.sites, heap, v))
        if rounds > len(sites) + 1:
            bad.append(("rounds", rounds, len(sites)))
    return bad


# -- lifting worked example ---------------------------------------------------------

PP = [("Ex", "m", i) for i in (1, 2, 3, 4)]
EX_SITES = ad.SiteTable(PP)
PLUS = ad.AValue(frozenset(), ad.S_POS)


def example_heap() -> tuple:
    pp1, pp2, pp3, pp4 = PP
    return EX_SITES.heap_of({
        pp1: ad.abs_array("T", ad.fs(pp2)),
        pp2: ad.abs_obj("c", [("g", ad.fs(pp1)), ("g'", PLUS)]),
        pp3: ad.abs_obj("c'", [("f", ad.nfs(pp2)), ("f'", ad.fs(pp4))]),
        pp4: ad.abs_obj("c'", [("f", ad.fs(pp1)), ("f'", ad.fs(pp3))]),
    })


def example_expected_lift() -> tuple:
    _pp1, _pp2, pp3, pp4 = PP
    return EX_SITES.heap_of({
        pp3: ad.abs_obj("c'", [("f", ad.nfs(PP[1])), ("f'", ad.fs(pp4))]),
        pp4: ad.abs_obj("c'", [("f", ad.nfs(PP[0])), ("f'", ad.fs(pp3))]),
    })


def lifting_example() -> tuple:
    """(filter as dict, lifted heap, expected heap) for the four-site example."""
    h = example_heap()
    k = derive_reach(ad.fs(PP[0]), h, EX_SITES)
    return EX_SITES.filter_dict(k), ad.lift_heap(h, k, EX_SITES), example_expected_lift()


# -- strategy equivalence --------------------------------------------------------------


def strategy_suite(n: int = 50, seed: int = 0, max_statements: int = 20) -> list:
    """Programs whose naive, semi-naive and parallel saturations differ."""
    bad = []
    for i in range(n):
        text = random_program(seed + i, max_statements)
        rs = translate(parse_program(text), RANDOM_CONFIG)
        bases = {}
        for mode in ("semi-naive", "naive", "parallel"):
            res = saturate(rs, mode=mode, record=False)
            bases[mode] = (res.status, res.base.as_set())
        if len({b for b in bases.values()}) != 1:
            bad.append(seed + i)
    return bad
