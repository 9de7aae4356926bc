import json

import pytest
from hypothesis import given, strategies as st

from conftest import corpus_text, load
from test_concrete import heaps
from fsdroid import absdomain as ad
from fsdroid import concrete as cc
from fsdroid import solver
from fsdroid import soundness as sd
from fsdroid.clausegen import translate
from fsdroid.concrete import Arr, Loc, Obj, Prim
from fsdroid.frontend import parse_program, subtype
from fsdroid.solver import GFact, saturate

SECRET, PUBLIC = ad.SECRET, ad.PUBLIC


def test_beta_prim_secret_int():
    v = sd.beta_value(Prim("int", 3, SECRET))
    assert v.sign == ad.S_POS and v.taint == SECRET and not v.locs


def test_beta_loc_is_nfs():
    assert sd.beta_value(Loc(4, ("A", "m", 2))) == ad.nfs(("A", "m", 2))


def test_beta_array_joins_elements():
    b = sd.beta_block(Arr("int", (Prim("int", 3), Prim("int", -1, SECRET))))
    assert b.kind == "array"
    v = b.vals[0]
    assert v.sign == ad.S_TOP and v.taint == SECRET


def _config(heap, statics, acts=()):
    return cc.Config(acts, (), heap, statics, {}, max(heap, default=-1) + 1)


def test_beta_config_static_and_heap():
    site = ("Leaky", "<init>", 0)
    heap = {0: Obj("Storage", ("s",), (Prim("String", "x", SECRET),))}
    facts = sd.beta_config(_config(heap, {("Main", "g"): Loc(0, site)}))
    assert [f.pred for f in facts] == ["H", "S"]
    h, s = facts
    assert h.key == site and h.payload.field("s").taint == SECRET
    assert s.payload == ad.nfs(site)


def test_beta_config_skips_unnamed_blocks():
    heap = {0: Obj("Storage", ("s",), (Prim("String", "", PUBLIC),))}
    assert sd.beta_config(_config(heap, {})) == []


def test_beta_config_waiting_frame_adds_nothing():
    act = Loc(0, "Leaky")
    top = cc.LocalState("Leaky", "onPause", 0, (Prim("int", 0),) * 5, (act,))
    heap = {0: Obj("Leaky", (), ())}
    plain = cc.ActFrame(act, "running", (), (), cc.Stack((top,)), True)
    waiting = cc.ActFrame(act, "running", (), (), cc.Stack((cc.Waiting(Loc(9, "t"), 0), top)), True)
    assert sd.beta_config(_config(heap, {}, (waiting,))) == sd.beta_config(_config(heap, {}, (plain,)))


def test_check_subsumed_trivial_cases(leaky):
    res = saturate(translate(*leaky))
    assert sd.check_subsumed([], res).holds
    assert sd.check_subsumed(list(res.base), res).holds


def test_check_subsumed_reports_missing(leaky):
    res = saturate(translate(*leaky))
    bogus = sd.ConcreteFact("S", ("Nope", "f"), payload=ad.zero_of("int"))
    v = sd.check_subsumed([bogus], res)
    assert not v.holds and v.missing == [bogus]
    assert v.as_dict()["missing"] == ["S(Nope.f, " + ad.render_value(ad.zero_of("int")) + ")"]


def test_corpus_is_sound():
    for name in ("leaky", "anon"):
        prog, cfg = load(name)
        r = sd.differential(corpus_text(name, "dalvik"), cfg, max_configs=5000)
        assert r.verdict == "sound", (name, r.missing, r.missed_leaks)


def test_invalid_program_verdict():
    assert sd.differential(".class A\n.super Nowhere\n").verdict == "invalid"


def test_fuzz_zero_trials():
    assert sd.fuzz(0) == []
    assert json.loads(sd.report_json([])) == {"schema": "fsdroid.fuzz-report/1", "results": []}


@pytest.mark.slow
def test_random_programs_sound():
    results = sd.fuzz(100, seed=0, max_configs=5000)
    verdicts = [r.verdict for r in results]
    assert "unsound" not in verdicts and "invalid" not in verdicts
    assert verdicts.count("sound") >= 90


def test_fuzz_is_deterministic():
    a = sd.report_json(sd.fuzz(5, seed=11, max_configs=500))
    b = sd.report_json(sd.fuzz(5, seed=11, max_configs=500))
    assert a == b


def test_minimizer_on_broken_solver(monkeypatch):
    """Dropping field writes through non-flow-sensitive locations must be caught and shrunk."""
    monkeypatch.setitem(solver.EVALUATORS, "move-fld-nfs", lambda *a: [])
    text = corpus_text("leaky", "dalvik")
    _prog, cfg = load("leaky")
    r = sd.differential_test(text, cfg=cfg, max_configs=3000)
    assert r.verdict == "unsound"
    assert r.minimized is not None
    assert sd.statement_count(r.minimized) < sd.statement_count(text)
    assert sd.differential(r.minimized, cfg, max_configs=3000).verdict == "unsound"


# -- properties --------------------------------------------------------------------

LABELS = [("A", "m", i) for i in range(6)]


@given(st.sets(st.tuples(st.integers(0, 20), st.sampled_from(LABELS + ["Act"]))),
       st.sets(st.tuples(st.integers(0, 20), st.sampled_from(LABELS + ["Act"]))))
def test_beta_filter_is_union_of_sites(xs, ys):
    sites = ad.SiteTable(LABELS[:4])
    a = [Loc(p, lab) for p, lab in xs]
    b = [Loc(p, lab) for p, lab in ys]
    ka, kb = sd.beta_filter(a, sites), sd.beta_filter(b, sites)
    assert sd.beta_filter(a + b, sites) == ka | kb
    assert ka & ~sites.all_ones == 0
    assert {lab for lab, bit in sites.filter_dict(ka).items() if bit} == {l.label for l in a} & set(LABELS[:4])


@given(heaps())
def test_serialization_preserves_abstraction(heap):
    labelled = {p: (Obj(b.cls, b.names, tuple(Loc(x.ptr, f"L{x.ptr}") if isinstance(x, Loc) else x for x in b.vals))
                    if isinstance(b, Obj) else b) for p, b in heap.items()}
    v = Loc(0, "L0")
    copy, ext = cc.serialize(labelled, v)
    assert sd.beta_value(copy) == sd.beta_value(v)
    full = {**labelled, **ext}
    assert cc.taint_of(full, copy) == cc.taint_of(labelled, v)
    # each copied block abstracts like its original, found through the shared label
    orig_by_label = {f"L{p}": sd.beta_block(b) for p, b in labelled.items()}
    seen, todo = set(), [copy]
    while todo:
        x = todo.pop()
        if not isinstance(x, Loc) or x.ptr in seen:
            continue
        seen.add(x.ptr)
        assert sd.beta_block(full[x.ptr]) == orig_by_label[x.label]
        todo.extend(cc.block_values(full[x.ptr]))


@given(st.sampled_from(range(12)), st.data())
def test_beta_of_taint_over_approximates(seed, data):
    prog = parse_program(sd.random_program(seed))
    ex = cc.explore(prog, sd.RANDOM_CONFIG, max_configs=200)
    psi = data.draw(st.sampled_from(ex.configs))
    for p, b in psi.heap.items():
        for x in cc.block_values(b):
            assert sd.beta_value(x).taint >= (x.taint if isinstance(x, Prim) else PUBLIC)
        assert max((v.taint for v in sd.beta_block(b).vals), default=PUBLIC) >= max((x.taint for x in cc.tainted_values(b)
                                                        if isinstance(x, Prim)), default=PUBLIC)


@given(st.integers(0, 30), st.data())
def test_subtype_transitive_on_random_programs(seed, data):
    prog = parse_program(sd.random_program(seed))
    names = sorted(prog.class_map) + ["Object", "Activity", "Thread", "Throwable", "int", "bool", "String"]
    a, b, c = (data.draw(st.sampled_from(names)) for _ in range(3))
    if subtype(prog, a, b) and subtype(prog, b, c):
        assert subtype(prog, a, c)
