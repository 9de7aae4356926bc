import pytest
from hypothesis import given, strategies as st

from conftest import corpus_text
from fsdroid.frontend import (AnalysisConfig, ParseError, excpt_handler, lookup, parse_program,
                              parse_sources_sinks, print_program, subtype)
from fsdroid.soundness import random_program


def test_empty_file_has_no_classes():
    assert parse_program("").classes == []


def test_leaky_shape(leaky):
    prog, _ = leaky
    names = [c.name for c in prog.classes]
    assert names == ["Leaky", "Storage"]
    cd = prog.class_map["Leaky"]
    assert cd.fields == [("st", "Storage"), ("st2", "Storage")]
    # the listing also declares the bodies of getDeviceId and send, which the figure leaves out
    assert [m.name for m in cd.methods] == ["<init>", "onRestart", "onResume", "onPause", "getDeviceId", "send"]
    assert cd.super == "Activity"


def test_duplicate_class_rejected():
    with pytest.raises(ParseError):
        parse_program(".class A\n.class A\n")


def test_duplicate_field_and_method_rejected():
    with pytest.raises(ParseError):
        parse_program(".class A\n.field x:int\n.field x:int\n")
    with pytest.raises(ParseError):
        parse_program(".class A\n.method m()\n.0 local registers\nreturn\n.end method\n"
                      ".method m()\n.0 local registers\nreturn\n.end method\n")


def test_undeclared_superclass_rejected():
    with pytest.raises(ParseError):
        parse_program(".class A\n.super Nope\n")


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as ei:
        parse_program(".class A\n.method m()\n.0 local registers\n   frobnicate r0\n.end method\n")
    assert ei.value.line == 4


def test_lookup_onpause(leaky):
    prog, _ = leaky
    cls, body = lookup(prog, "Leaky", "onPause")
    assert cls == "Leaky"
    assert [s.line for s in body[:4]] == [24, 25, 26, 27]


def test_lookup_walks_to_superclass():
    prog = parse_program(".class A\n.method m()\n.0 local registers\nreturn\n.end method\n.class B\n.super A\n")
    assert lookup(prog, "B", "m")[0] == "A"


def test_lookup_respects_override():
    prog = parse_program(".class A\n.method m()\n.0 local registers\nreturn\n.end method\n"
                         ".class B\n.super A\n.method m()\n.0 local registers\nreturn\n.end method\n")
    assert lookup(prog, "B", "m")[0] == "B"
    assert lookup(prog, "A", "m")[0] == "A"


def test_lookup_missing(leaky):
    with pytest.raises(LookupError):
        lookup(leaky[0], "Leaky", "missing")


HIER = ".class A\n.class B\n.super A\n.class C\n.super B\n.class D\n.super A\n"


def test_subtype_examples():
    prog = parse_program(HIER)
    assert subtype(prog, "B", "B")
    assert subtype(prog, "B[]", "A[]")
    assert not subtype(prog, "A[]", "B[]")
    assert not subtype(prog, "int", "bool")
    assert subtype(prog, "C", "Object")
    assert not subtype(prog, "B", "D")


@given(st.lists(st.sampled_from(["A", "B", "C", "D", "Object", "Throwable", "IntExcpt", "A[]", "C[]", "int"]),
                min_size=3, max_size=3))
def test_subtype_partial_order(ts):
    prog = parse_program(HIER)
    a, b, c = ts
    assert subtype(prog, a, a)
    if subtype(prog, a, b) and subtype(prog, b, c):
        assert subtype(prog, a, c)
    if subtype(prog, a, b) and subtype(prog, b, a):
        assert a == b


CATCH = """.class A
.method m()
.1 local register
    move r0 1
    move r0 2
    return
    return
    return
.catch {c1} 0 1 3
.catch {c2} 0 2 4
.end method
"""


def test_excpt_handler_empty_table():
    prog = parse_program(CATCH.replace(".catch {c1} 0 1 3\n", "").replace(".catch {c2} 0 2 4\n", ""))
    assert excpt_handler(prog, ("A", "m", 0), "Throwable") is None


def test_throwable_handler_catches_intexcpt():
    prog = parse_program(CATCH.format(c1="Throwable", c2="Throwable"))
    assert excpt_handler(prog, ("A", "m", 0), "IntExcpt") == 3


def test_overlapping_entries_first_wins():
    prog = parse_program(CATCH.format(c1="Throwable", c2="IntExcpt"))
    table = prog.method_at("A", "m").excpt_table
    # oracle: scan the table in textual order
    for pc in range(5):
        for exc in ("Throwable", "IntExcpt"):
            want = next((e.handler for e in table if e.start <= pc <= e.end and prog.is_subclass(exc, e.cls)), None)
            assert excpt_handler(prog, ("A", "m", pc), exc) == want
    assert excpt_handler(prog, ("A", "m", 1), "IntExcpt") == 3
    assert excpt_handler(prog, ("A", "m", 2), "IntExcpt") == 4
    assert excpt_handler(prog, ("A", "m", 2), "Throwable") is None


def test_builtin_fields_injected():
    prog = parse_program("")
    assert [f for f, _ in prog.all_fields("Activity")] == ["finished", "intent", "result", "parent"]
    assert [f for f, _ in prog.all_fields("Thread")] == ["inte", "finished"]


def test_sources_sinks_parsing():
    cfg = parse_sources_sinks(corpus_text("leaky", "sources-sinks"))
    assert cfg.sources == frozenset({("Leaky", "getDeviceId")})
    assert cfg.sinks == frozenset({("Leaky", "send")})
    assert cfg.entry_activities == ("Leaky",)
    with pytest.raises(ParseError):
        AnalysisConfig(frozenset({("Ghost", "m")})).validate(parse_program(""))


def test_round_trip_corpus():
    for name in ("leaky", "anon"):
        prog = parse_program(corpus_text(name))
        assert parse_program(print_program(prog)) == prog


# statement templates over a fixed class shape; registers r0..r2 are locals, r3 is this
_STMTS = [
    "move r0 r1", 'move r1 "x"', "move r2 -7", "move r2 true", "move r0 r3.f", "move r3.f r0",
    "move r0 K.g", "move K.g r0", "binop r2 add r2 r2", "unop r2 neg r2", "new r0 K",
    "newarray r0 r2 int", "move r2 r0[r2]", "move r0[r2] r2", "invoke r3 h() r2", "sinvoke K s()",
    "newintent r0 K", "put-extra r0 r1 r1", "get-extra r0 r1 String", "checkcast r0 K",
    "instanceof r2 r0 K", "move-exception r0", "throw r0", "monitor-enter r3", "monitor-exit r3",
    "start-thread r0", "join r0", "interrupt r0", "is-interrupted r0", "wait r3", "return",
]


@st.composite
def program_texts(draw):
    body = draw(st.lists(st.sampled_from(_STMTS), min_size=0, max_size=12))
    n = len(body) + 2
    jumps = draw(st.lists(st.tuples(st.integers(0, n - 1), st.sampled_from(["goto", "if"])), max_size=3))
    lines = list(body)
    for tgt, kind in jumps:
        lines.append(f"goto {tgt}" if kind == "goto" else f"if r2 <= r2 goto {tgt}")
    lines.append("return")
    catch = draw(st.booleans())
    text = (".class K\n.super Activity\n.field f:Object\n.field static g:Object\n"
            ".method h(int)\n.0 local registers\nreturn\n.end method\n"
            ".method static s()\n.0 local registers\nreturn\n.end method\n"
            ".method m()\n.3 local registers\n" + "\n".join("    " + x for x in lines) + "\n")
    if catch:
        text += f".catch Throwable 0 {len(lines) - 1} {len(lines) - 1}\n"
    return text + ".end method\n"


@given(program_texts())
def test_parse_print_round_trip(text):
    prog = parse_program(text)
    printed = print_program(prog)
    assert parse_program(printed) == prog
    assert print_program(parse_program(printed)) == printed


@given(st.integers(0, 10_000))
def test_round_trip_random_programs(seed):
    prog = parse_program(random_program(seed))
    assert parse_program(print_program(prog)) == prog
