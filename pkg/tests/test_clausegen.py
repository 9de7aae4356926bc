import pytest

import golden
from fsdroid import absdomain as ad
from fsdroid.clausegen import (Atom, Const, Fn, HornClause, Var, clauses_at_line, pretty, render_clause, term_vars,
                               translate, translate_rhs)
from fsdroid.frontend import Lit, Reg, StaticRef, parse_program
from fsdroid.solver import GFact, LFact, Solver, saturate
from fsdroid.soundness import RANDOM_CONFIG, random_program


@pytest.fixture(scope="module")
def leaky_rs(leaky):
    return translate(*leaky)


@pytest.mark.parametrize("line", [7, 18, 20])
def test_listing_lines_match_golden(leaky_rs, line):
    ok, ours, missing, extra = golden.compare_line(leaky_rs, line)
    assert not missing, missing
    assert ok, extra


def test_line_counts(leaky_rs):
    assert len(clauses_at_line(leaky_rs, 7)) == 1
    assert len(clauses_at_line(leaky_rs, 20)) == 4
    assert {c.rule for c in clauses_at_line(leaky_rs, 18)} >= {"invoke-call", "invoke-result"}


def test_comparator_rejects_mutations(leaky_rs):
    text = pretty(leaky_rs, {c.pp for c in clauses_at_line(leaky_rs, 20)})
    sigs = [s for _r, s in golden.pretty_sigs(text)]
    assert sorted(sigs) == sorted(golden.GOLDEN[20])
    mutated = [s for _r, s in golden.pretty_sigs(text.replace("FS(9)", "FS(8)"))]
    assert sorted(mutated) != sorted(golden.GOLDEN[20])
    dropped = [s for _r, s in golden.pretty_sigs(text.replace(" ∧ Reach(v̂'', ĥ, k̂')", ""))]
    assert sorted(dropped) != sorted(golden.GOLDEN[20])


def test_comparator_ignores_variable_names(leaky_rs):
    text = pretty(leaky_rs, {c.pp for c in clauses_at_line(leaky_rs, 7)})
    renamed = text.replace("v̂*", "ŵ*").replace("k̂'", "q̂")
    assert golden.pretty_sigs(renamed) == golden.pretty_sigs(text)


def test_line7_clause_contents(leaky_rs):
    [cl] = clauses_at_line(leaky_rs, 7)
    text = render_clause(cl)
    assert "Reach(FS(Leaky.<init>:0)" in text
    assert "Storage{s ↦ zero(String)}" in text


def test_translation_deterministic(leaky):
    a, b = translate(*leaky), translate(*leaky)
    assert [c.structure() for c in a.clauses] == [c.structure() for c in b.clauses]
    assert pretty(a) == pretty(b)


def _programs():
    from conftest import load
    yield load("leaky")
    yield load("anon")
    for seed in range(15):
        yield parse_program(random_program(seed)), RANDOM_CONFIG


def test_head_variables_bound_in_body():
    for prog, cfg in _programs():
        for cl in translate(prog, cfg).clauses:
            body, head = set(), set()
            for b in cl.body:
                term_vars(b, body)
            for h in cl.head:
                term_vars(h, head)
            assert head - body - {"_"} == set(), cl.rule


def test_unbound_head_variable_rejected():
    with pytest.raises(ValueError):
        HornClause((), (Atom("H", (), (Var("x"), Const("c"))),), "bad", None)


def test_every_statement_translated():
    for prog, cfg in _programs():
        rs = translate(prog, cfg)
        covered = {cl.pp for cl in rs.clauses}
        for pp, _st in prog.statements():
            assert pp in covered, pp


def test_rhs_register():
    pp = ("C", "m", 3)
    [cl] = translate_rhs(pp, Reg(2))
    assert [a.pred for a in cl.body] == ["LState"]
    assert [a.pred for a in cl.head] == ["RHS"]
    assert render_clause(cl).endswith("RHS⟨C,m,3⟩(v̂*[r2])")


def test_rhs_static_is_lifted():
    [cl] = translate_rhs(("C", "m", 0), StaticRef("C", "g"))
    assert [a.pred for a in cl.body] == ["S"] and cl.body[0].index == ("C", "g")
    assert cl.head[0].args[0] == Fn("lift", (Var("v"), Const("1*")))


def test_rhs_literal_is_a_fact(leaky):
    [cl] = translate_rhs(("C", "m", 0), Lit("String", "x"))
    assert cl.body == ()
    rs = translate(*leaky)
    sv = Solver(rs)
    lits = [f for f in sv.seed_facts() if f.pred == "RHS"]
    assert ad.beta_prim("String", "http://myapp.com/") in [f.value for f in lits]


THROWER = """.class A
.super Activity
.method onStart()
.1 local register
    new r0 Throwable
    throw r0
    return
.catch Throwable 1 1 2
.end method
"""


def test_throw_clause():
    from fsdroid.frontend import AnalysisConfig
    prog = parse_program(THROWER)
    rs = translate(prog, AnalysisConfig(entry_activities=("A",)))
    [cl] = [c for c in rs.clauses if c.pp == ("A", "onStart", 1) and c.rule == "throw"]
    assert [a.pred for a in cl.body] == ["LState"]
    assert [a.pred for a in cl.head] == ["AState"]
    assert "excpt ↦ v̂*[r0]" in render_clause(cl)
    res = saturate(rs)
    # the handler at pc 2 is reached through the abnormal state
    assert any(f.pred == "A" and f.pp == ("A", "onStart", 1) for f in res.base)
    assert any(f.pred == "L" and f.pp == ("A", "onStart", 2) for f in res.base)


def test_cbk_for_on_pause(leaky):
    rs = translate(*leaky)
    [cl] = [c for c in rs.clauses if c.kind == "cbk" and c.params == ("Leaky", "onPause")]
    assert [a.pred for a in cl.body if isinstance(a, Atom)] == ["H"]
    assert cl.head[0].index == ("Leaky", "onPause", 0)
    base = saturate(rs).base
    act = ad.nfs("Leaky")
    zero = ad.zero_of("int")
    want = LFact("L", ("Leaky", "onPause", 0), (act, (act,)), (zero, zero, act, zero, zero), rs.sites.empty_heap(), 0)
    assert want in base


def test_abstate_with_handler(leaky):
    rs = translate(*leaky)
    caught = [c for c in rs.clauses if c.rule == "abstate-caught"]
    assert caught
    for cl in caught:
        assert [a.pred for a in cl.body if isinstance(a, Atom)] == ["AState", "GetBlk"]
        assert {c.op for c in cl.body if not isinstance(c, Atom)} == {"<=", "exc"}


def test_fin_rule(leaky):
    rs = translate(*leaky)
    [fin] = [c for c in rs.clauses if c.kind == "fin"]
    assert "finished ↦ top(bool)" in render_clause(fin)
    base = saturate(rs).base
    objs = [g.payload for g in base.get("H", "Leaky")]
    assert any(b.field("finished").bool == ad.B_TOP for b in objs)


def test_heap_access_rules(leaky):
    rs = translate(*leaky)
    kinds = [c.rule for c in rs.clauses if c.rule.startswith("GetBlk")]
    assert kinds == ["GetBlk-FS", "GetBlk-NFS"]
    sv = Solver(rs)
    sv.base.add(GFact("H", "Leaky", rs.default_obj("Leaky")))
    pp = ("Leaky", "onPause", 0)
    st7 = ("Leaky", "<init>", 0)
    h = rs.sites.heap_of({st7: rs.site_blocks[st7]})
    empty = LFact("L", pp, (ad.nfs("Leaky"), ()), (ad.zero_of("int"),) * 5, h, 0)
    assert list(sv.getblk(empty, 0, None)) == []
    both = empty._replace(regs=(ad.join(ad.fs(st7), ad.nfs("Leaky")),) + empty.regs[1:])
    got = [(lab, fs, blk) for lab, fs, blk, _p in sv.getblk(both, 0, None)]
    assert sorted(got, key=repr) == sorted([("Leaky", False, rs.default_obj("Leaky")),
                                            (st7, True, rs.site_blocks[st7])], key=repr)


def test_top_value_of_reference_type(leaky):
    rs = translate(*leaky)
    top = rs.top_value("Storage")
    assert top.locs == frozenset({(("Leaky", "<init>", 0), False), (("Leaky", "<init>", 2), False)})
    assert top.taint == ad.SECRET and top.sign == ad.S_ZERO
