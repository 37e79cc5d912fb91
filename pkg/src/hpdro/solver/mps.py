"""Fixed-form MPS writer.

Names longer than eight characters, or containing blanks, are replaced by
a two-letter prefix plus a six-digit hex digest of the full name; the
mapping is written as ``*`` comment lines so row provenance stays readable.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from ..model import MilpInstance

_PREFIX = {
    "peak": "PK", "capacity": "CP", "comfort_hi": "CH", "comfort_lo": "CL",
    "water_hold": "WH", "switch_hi": "SH", "switch_lo": "SL",
}


def _short(name: str, prefix: str, used: set) -> str:
    clean = name.replace(" ", "_")
    if len(clean) <= 8 and " " not in name and clean not in used:
        used.add(clean)
        return clean
    salt = 0
    while True:
        digest = hashlib.sha1(f"{name}#{salt}".encode()).hexdigest()[:6].upper()
        cand = (prefix[:2] + digest)[:8]
        if cand not in used:
            used.add(cand)
            return cand
        salt += 1


def _num(v: float) -> str:
    """Shortest representation that fits a 12-character MPS field."""
    v = float(v)
    if v == int(v) and abs(v) < 1e11:
        return str(int(v))
    s = repr(v)
    if len(s) <= 12:
        return s
    for prec in range(12, 0, -1):
        s = f"{v:.{prec}g}"
        if len(s) <= 12:
            return s
    raise ValueError(f"cannot encode {v} in 12 characters")


def _line(f1="", f2="", f3="", f4="", f5="", f6=""):
    # fields start at columns 2, 5, 15, 25, 40, 50
    s = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}"
    if f5:
        s += f"   {f5:<8}  {f6:>12}"
    return s.rstrip()


def mps_names(instance: MilpInstance) -> tuple[list[str], list[str]]:
    used = {"COST"}
    rows = [_short(n, _PREFIX.get(t, "R"), used) for n, t in zip(instance.row_names, instance.row_tags)]
    used_c = set()
    cols = [_short(n, "X" if instance.integer[j] else "C", used_c) for j, n in enumerate(instance.var_names)]
    return rows, cols


def export_mps(instance: MilpInstance, path, name: str = "HPDRO") -> Path:
    path = Path(path)
    rows, cols = mps_names(instance)
    out = [f"NAME          {name[:8]}"]
    for full, short in zip(instance.row_names, rows):
        if full != short:
            out.append(f"* ROW {short} {full}")
    for full, short in zip(instance.var_names, cols):
        if full != short:
            out.append(f"* COL {short} {full}")
    out.append("ROWS")
    out.append(_line("N", "COST"))
    for s, r in zip(instance.sense, rows):
        out.append(_line(str(s), r))
    out.append("COLUMNS")
    in_int = False
    A = instance.A
    for j, cname in enumerate(cols):
        is_int = bool(instance.integer[j])
        if is_int and not in_int:
            out.append("    MARKER                 'MARKER'                 'INTORG'")
            in_int = True
        elif not is_int and in_int:
            out.append("    MARKER                 'MARKER'                 'INTEND'")
            in_int = False
        entries = []
        if instance.c[j] != 0:
            entries.append(("COST", instance.c[j]))
        for i in np.flatnonzero(A[:, j]):
            entries.append((rows[i], A[i, j]))
        if not entries:
            entries.append(("COST", 0.0))
        for k in range(0, len(entries), 2):
            pair = entries[k:k + 2]
            if len(pair) == 2:
                out.append(_line("", cname, pair[0][0], _num(pair[0][1]), pair[1][0], _num(pair[1][1])))
            else:
                out.append(_line("", cname, pair[0][0], _num(pair[0][1])))
    if in_int:
        out.append("    MARKER                 'MARKER'                 'INTEND'")
    out.append("RHS")
    for i in np.flatnonzero(instance.rhs):
        out.append(_line("", "RHS", rows[i], _num(instance.rhs[i])))
    out.append("BOUNDS")
    for j, cname in enumerate(cols):
        lo, hi = instance.lb[j], instance.ub[j]
        if lo == hi:
            out.append(_line("FX", "BND", cname, _num(lo)))
            continue
        if np.isinf(lo):
            out.append(_line("MI", "BND", cname))
        elif lo != 0 or instance.integer[j]:
            out.append(_line("LO", "BND", cname, _num(lo)))
        if np.isinf(hi):
            if instance.integer[j]:
                out.append(_line("PL", "BND", cname))
        else:
            out.append(_line("UP", "BND", cname, _num(hi)))
    out.append("ENDATA")
    path.write_text("\n".join(out) + "\n")
    return path
