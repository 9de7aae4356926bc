"""Normalizing comparator for pretty-printed clauses.

A clause is reduced to a signature that ignores variable names: the multiset
of body atoms, side conditions and head atoms.  Atom indices are rewritten
relative to the clause's own line (``@pp``, ``@next``, ``@callee``); GetBlk
keeps its register and location kind, Reach keeps whether it starts from a
fixed flow-sensitive site.
"""

import re

_ATOM = re.compile(r"^(\w+)(?:⟨([^⟩]*)⟩)?\((.*)\)$", re.S)
_OPEN, _CLOSE = "([{⟨", ")]}⟩"


def split_top(text: str, sep: str) -> list:
    out, depth, cur, i = [], 0, [], 0
    while i < len(text):
        ch = text[i]
        if ch in _OPEN:
            depth += 1
        elif ch in _CLOSE:
            depth -= 1
        if depth == 0 and text.startswith(sep, i):
            out.append("".join(cur).strip())
            cur = []
            i += len(sep)
            continue
        cur.append(ch)
        i += 1
    out.append("".join(cur).strip())
    return [x for x in out if x]


def _loc_kind(term: str) -> str:
    m = re.match(r"^(N?FS)\((\d+)\)$", term)
    if m:
        return f"{m.group(1)} {m.group(2)}"
    if term.startswith("NFS("):
        return "NFS"
    if term.startswith("FS("):
        return "FS"
    return "_"


def _index(idx: str, line: int) -> str:
    if idx.isdigit():
        n = int(idx)
        return "@pp" if n == line else ("@next" if n == line + 1 else "@callee")
    parts = [p.strip() for p in idx.split(",")]
    if len(parts) == 3:
        return "@handler"
    return " " + parts[-1]


def atom_sig(text: str, line: int):
    m = _ATOM.match(text)
    if not m:
        return None
    pred, idx, args = m.group(1), m.group(2), m.group(3)
    if pred == "ExcptTable":
        return None
    if pred == "GetBlk":
        return f"GetBlk {idx} ({_loc_kind(split_top(args, ', ')[2])})"
    if pred == "Reach":
        first = split_top(args, ", ")[0]
        return "Reach(" + (_loc_kind(first) if "FS(" in first and first.count("(") == 1 else "var") + ")"
    if pred in ("LState", "AState", "RHS"):
        return pred + _index(idx, line)
    if pred in ("Res", "Uncaught"):
        return pred + _index(idx, line)
    return pred


def cond_sig(text: str) -> str:
    if text.startswith("ExcptTable"):
        return "exc" if not text.endswith("⊥") else "noexc"
    if "⋢ ⊥" in text and "⊓" in text:
        return "meet"
    if " ≤ " in text:
        return "sub"
    if " = " in text:
        return "eq"
    raise ValueError(f"unrecognized side condition: {text}")


def clause_sig(rendered: str, line: int) -> tuple:
    body, head = rendered.split(" ⟹ ")
    atoms, conds = [], []
    for part in split_top(body, " ∧ "):
        a = atom_sig(part, line)
        if a is None:
            conds.append(cond_sig(part))
        else:
            atoms.append(a)
    heads = [atom_sig(h, line) for h in split_top(head, " ∧ ")]
    return (tuple(sorted(atoms)), tuple(sorted(conds)), tuple(sorted(heads)))


def pretty_sigs(pretty_text: str) -> list:
    """Signatures of every line of ``clausegen.pretty`` output, with the rule name."""
    out = []
    for ln in pretty_text.splitlines():
        m = re.match(r"^\[(\S+) @ (\d+)\] (.*)$", ln)
        if m:
            out.append((m.group(1), clause_sig(m.group(3), int(m.group(2)))))
    return out


def sig(body, conds, heads) -> tuple:
    return (tuple(sorted(body)), tuple(sorted(conds)), tuple(sorted(heads)))


# expected clause groups for the three listing lines, as signatures
GOLDEN = {
    7: [sig(["LState@pp", "Reach(FS 7)"], [], ["Lift", "LState@next"])],
    18: [
        sig(["LState@pp", "GetBlk r1 (_)"], ["sub"], ["LState@callee"]),
        sig(["LState@pp", "GetBlk r1 (_)", "Res getDeviceId"], ["sub", "eq", "meet"], ["LState@next"]),
    ],
    20: [
        sig(["LState@pp"], [], ["RHS@pp"]),
        sig(["LState@pp", "RHS@pp", "GetBlk r0 (FS 7)"], [], ["LState@next"]),
        sig(["LState@pp", "RHS@pp", "GetBlk r0 (FS 9)"], [], ["LState@next"]),
        sig(["LState@pp", "RHS@pp", "GetBlk r0 (NFS)", "Reach(var)"], [], ["H", "Lift", "LState@next"]),
    ],
}
# the listing leaves out exception handling at the call; these are the only extras allowed
EXCEPTION_RULES = {"invoke-uncaught", "abstate-caught", "abstate-uncaught"}


def compare_line(rs, line: int) -> tuple:
    """``(ok, ours, missing, extra)`` for one listing line."""
    from fsdroid.clausegen import clauses_at_line, pretty

    pps = {cl.pp for cl in clauses_at_line(rs, line)}
    ours = pretty_sigs(pretty(rs, pps))
    want = list(GOLDEN[line])
    got = [s for _r, s in ours]
    missing = [w for w in want if w not in got]
    extra = [(r, s) for r, s in ours if s not in want]
    if line == 18:
        ok = not missing and all(r in EXCEPTION_RULES for r, _s in extra)
    else:
        ok = not missing and not extra and len(got) == len(want)
    return ok, ours, missing, extra
