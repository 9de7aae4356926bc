import random

from hypothesis import given, strategies as st

import suites
from fsdroid import absdomain as ad
from fsdroid.absdomain import AValue, BOTTOM, S_NEG, S_POS, S_TOP, S_ZERO, fs, nfs

PP5 = ("X", "m", 5)


def sign(s, taint=0):
    return AValue(frozenset(), s, 0, 0, taint)


def test_join_bottom_identity():
    v = AValue(frozenset({(PP5, True)}), S_POS, ad.B_TT, 1, 1)
    assert ad.join(BOTTOM, v) == v


def test_meet_fs_nfs_is_bottom():
    assert ad.meet(fs(PP5), nfs(PP5)) == BOTTOM


def test_join_signs():
    assert ad.join(sign(S_NEG), sign(S_POS)).sign == S_TOP


def test_abs_add():
    # 64-bit wrapping: two positives can overflow to a negative, so the sum is not provably positive
    assert ad.abs_binop("add", sign(S_POS), sign(S_POS)).sign == S_TOP
    assert ad.abs_binop("add", sign(S_POS), sign(S_ZERO)).sign == S_POS
    assert ad.abs_binop("add", sign(S_POS), sign(S_NEG)).sign == S_TOP
    assert ad.abs_binop("add", sign(S_POS, 1), sign(S_ZERO, 0)).taint == ad.SECRET


def test_abs_mul_and_div():
    assert ad.abs_binop("mul", sign(S_ZERO), sign(S_TOP)).sign == S_ZERO
    assert ad.abs_binop("div", sign(S_POS), sign(S_ZERO)).sign == ad.S_BOT  # stuck: no result
    assert ad.abs_binop("div", sign(S_ZERO), sign(S_NEG)).sign == S_ZERO


def test_abs_comp_examples():
    assert ad.abs_comp("<", sign(S_NEG), sign(S_POS)) == (True, False)
    assert ad.abs_comp("==", sign(S_ZERO), sign(S_ZERO)) == (True, False)
    assert ad.abs_comp(">", sign(S_TOP), sign(S_ZERO)) == (True, True)


def test_lift_value_axioms_examples():
    sites = ad.SiteTable([PP5])
    assert ad.lift_value(fs(PP5), 1, sites) == nfs(PP5)
    assert ad.lift_value(fs(PP5), 0, sites) == fs(PP5)
    assert ad.lift_value(nfs("Act"), 1, sites) == nfs("Act")
    p = AValue(frozenset(), S_POS, ad.B_TT, 1, 1)
    assert ad.lift_value(p, 1, sites) == p


def test_lifting_example_filter_and_heap():
    k, lifted, expected = suites.lifting_example()
    pp1, pp2, pp3, pp4 = suites.PP
    assert k == {pp1: 1, pp2: 1, pp3: 0, pp4: 0}
    assert lifted == expected
    assert lifted[0] is None and lifted[1] is None
    assert lifted[3].field("f") == nfs(pp1)
    assert lifted[2] == suites.example_heap()[2]


def test_lift_heap_all_zero_and_all_one():
    h = suites.example_heap()
    assert ad.lift_heap(h, 0, suites.EX_SITES) == h
    assert ad.lift_heap(h, suites.EX_SITES.all_ones, suites.EX_SITES) == (None,) * 4


def test_join_filter_examples():
    s = ad.SiteTable(["a", "b"])
    k = s.filter_of({"a": 1})
    assert ad.join_filter(0, k) == k
    assert s.filter_dict(ad.join_filter(s.filter_of({"a": 1}), s.filter_of({"b": 1}))) == {"a": 1, "b": 1}


def test_zero_of_defaults():
    assert ad.zero_of("int").sign == S_ZERO
    assert ad.zero_of("bool").bool == ad.B_FF
    assert ad.zero_of("String").str == 1
    # null reference is the integer zero
    assert ad.zero_of("Storage") == ad.zero_of("int")


def test_finiteness_bound():
    # the value space for one site and one label is exactly enumerable
    locs = [("s", True), ("s", False), ("a", False)]
    n = (1 << len(locs)) * 5 * 4 * 2 * 2
    seen = set()
    for mask in range(1 << len(locs)):
        for sg in range(5):
            for b in range(4):
                for s_ in range(2):
                    for t in range(2):
                        seen.add(AValue(frozenset(x for i, x in enumerate(locs) if mask >> i & 1), sg, b, s_, t))
    assert len(seen) == n


# -- bulk seeded suites (10 000 cases each) ------------------------------------------


def test_lattice_laws_bulk():
    assert suites.lattice_suite(10_000) == []


def test_lift_axioms_bulk():
    assert suites.lift_suite(10_000) == []


def test_filter_laws_bulk():
    assert suites.filter_suite(10_000) == []


def test_operator_soundness_bulk():
    assert suites.operator_suite(10_000) == []


# -- hypothesis versions, for shrinking when something breaks ------------------------


values = st.builds(lambda seed: suites.rand_value(random.Random(seed)), st.integers(0, 2**32))


@given(values, values, values)
def test_lattice_laws(a, b, c):
    assert suites._lattice_case(a, b, c) == []


@given(values, values, st.integers(0, 15))
def test_lift_axioms(u, v, k):
    assert suites._lift_case(u, v, k) == []
    assert suites._lift_case(u, ad.join(u, v), k) == []


@given(st.integers(0, 15), values)
def test_lift_block_and_heap_consistent(k, v):
    sites = suites.SITES
    b = ad.abs_obj("C", [("f", v), ("g", v)])
    h = sites.heap_of({sites.sites[0]: b, sites.sites[2]: b})
    lifted = ad.lift_heap(h, k, sites)
    for i, blk in enumerate(h):
        if blk is None or (k >> i) & 1:
            assert lifted[i] is None
        else:
            assert lifted[i] == ad.lift_block(blk, k, sites)
