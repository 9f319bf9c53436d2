"""Independent posit oracle used only by the tests.

Values are read off the bit string directly; rounding uses the fact that the
boundary between consecutive n-bit patterns p and p+1 is the value of the
(n+1)-bit pattern 2p+1 with the same es.  No code is shared with positnn.
"""
from __future__ import annotations

import bisect
from fractions import Fraction
from functools import lru_cache


def value(bits: int, n: int, es: int) -> Fraction | None:
    mask = (1 << n) - 1
    if bits == 0:
        return Fraction(0)
    if bits == 1 << (n - 1):
        return None
    negative = bits >> (n - 1) == 1
    if negative:
        bits = (-bits) & mask
    body = format(bits, f"0{n}b")[1:]
    lead = body[0]
    run = len(body) - len(body.lstrip(lead))
    k = run - 1 if lead == "1" else -run
    rest = body[run + 1:]
    exp_str = rest[:es].ljust(es, "0")
    exponent = int(exp_str, 2) if es else 0
    frac_str = rest[es:]
    fraction = Fraction(int(frac_str, 2), 2 ** len(frac_str)) if frac_str else Fraction(0)
    v = Fraction(2) ** ((2**es) * k + exponent) * (1 + fraction)
    return -v if negative else v


@lru_cache(maxsize=None)
def _table(n: int, es: int):
    positives = [(value(p, n, es), p) for p in range(1, 1 << (n - 1))]
    values = [v for v, _ in positives]
    thresholds = [value(2 * p + 1, n + 1, es) for _, p in positives[:-1]]
    return values, [p for _, p in positives], thresholds


def round_to_posit(x: Fraction, n: int, es: int) -> int:
    mask = (1 << n) - 1
    if x == 0:
        return 0
    values, pats, thresholds = _table(n, es)
    mag = abs(x)
    if mag >= values[-1]:
        p = pats[-1]
    elif mag <= values[0]:
        p = pats[0]
    else:
        i = bisect.bisect_right(values, mag) - 1
        lo, hi = pats[i], pats[i + 1]
        t = thresholds[i]
        if mag < t:
            p = lo
        elif mag > t:
            p = hi
        else:
            p = lo if lo % 2 == 0 else hi
    return (-p) & mask if x < 0 else p


def op(name: str, a: int, b: int, n: int, es: int) -> int:
    nar = 1 << (n - 1)
    va, vb = value(a, n, es), value(b, n, es)
    if va is None or vb is None:
        return nar
    if name == "add":
        r = va + vb
    elif name == "sub":
        r = va - vb
    elif name == "mul":
        r = va * vb
    else:
        if vb == 0:
            return nar
        r = va / vb
    return round_to_posit(r, n, es)
