"""Enumerate every value of a posit format and bucket them for plotting."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

from ..posit import PositConfig, enumerate_values

MAX_ENUM_NBITS = 16


@dataclass
class Distribution:
    config: PositConfig
    values: list            # (bits, Fraction) for finite patterns, ascending by value
    linear: list            # (lo, hi, count)
    log2: list              # (sign, exponent, count): values with floor(log2|x|) == exponent

    @property
    def finite_count(self) -> int:
        return len(self.values)

    @property
    def max_abs(self) -> Fraction:
        return max(abs(v) for _, v in self.values)


def _floor_log2(x: Fraction) -> int:
    x = abs(x)
    e = x.numerator.bit_length() - x.denominator.bit_length()
    # correct the estimate by at most one step
    if Fraction(2) ** e > x:
        e -= 1
    return e


def distribution(cfg: PositConfig, buckets: int = 32) -> Distribution:
    if cfg.nbits > MAX_ENUM_NBITS:
        raise ValueError(f"refusing to enumerate {cfg}: at most {MAX_ENUM_NBITS} bits")
    if buckets < 1:
        raise ValueError("buckets must be positive")
    vals = sorted(((b, v) for b, v in enumerate_values(cfg) if v is not None), key=lambda t: t[1])
    top = cfg.maxpos
    width = 2 * top / buckets
    counts = [0] * buckets
    for _, v in vals:
        counts[min(int((v + top) / width), buckets - 1)] += 1
    linear = [(-top + i * width, -top + (i + 1) * width, c) for i, c in enumerate(counts)]
    logc: dict = {}
    for _, v in vals:
        if v:
            key = (1 if v > 0 else -1, _floor_log2(v))
            logc[key] = logc.get(key, 0) + 1
    log2 = [(s, e, c) for (s, e), c in sorted(logc.items())]
    return Distribution(cfg, vals, linear, log2)


def values_csv(dist: Distribution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bits", "value", "exact", "log2_abs"])
    for bits, v in dist.values:
        log2 = "" if v == 0 else repr(math.log2(abs(v)))
        w.writerow([f"0x{bits:0{(dist.config.nbits + 3) // 4}x}", repr(float(v)), str(v), log2])
    return buf.getvalue()


def histogram_csv(dist: Distribution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scale", "bucket_lo", "bucket_hi", "count"])
    for lo, hi, c in dist.linear:
        w.writerow(["linear", repr(float(lo)), repr(float(hi)), c])
    for sign, e, c in dist.log2:
        lo, hi = float(2 ** e), float(2 ** (e + 1))
        if sign < 0:
            lo, hi = -hi, -lo
        w.writerow(["log2", repr(lo), repr(hi), c])
    return buf.getvalue()
