"""Scalar posit arithmetic for arbitrary ``(nbits, es)``.

Everything here works on Python integers: values are carried as exact dyadic
pairs ``(mantissa, exponent)`` and rounded exactly once by :func:`encode_round`.
The array kernels in :mod:`positnn.kernels` are checked bit-for-bit against
this module.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering

__all__ = [
    "PositConfig",
    "PositValue",
    "DecodedPosit",
    "Special",
    "decode",
    "encode_round",
    "add",
    "sub",
    "mul",
    "div",
    "convert",
    "to_float64",
    "from_float64",
    "compare",
    "enumerate_values",
]

MAX_NBITS = 64
MAX_ES = 4


@dataclass(frozen=True)
class PositConfig:
    """A posit format: total width ``nbits`` and maximum exponent size ``es``."""

    nbits: int
    es: int

    def __post_init__(self) -> None:
        if not 2 <= self.nbits <= MAX_NBITS:
            raise ValueError(f"nbits must be in [2, {MAX_NBITS}], got {self.nbits}")
        if not 0 <= self.es <= MAX_ES:
            raise ValueError(f"es must be in [0, {MAX_ES}], got {self.es}")

    @classmethod
    def parse(cls, text: str) -> "PositConfig":
        """Parse ``"8:2"`` or ``"posit(8,2)"``."""
        t = text.strip().lower().removeprefix("posit").strip("() ")
        parts = t.replace(",", ":").split(":")
        if len(parts) != 2:
            raise ValueError(f"cannot parse posit format {text!r}; expected nbits:es")
        return cls(int(parts[0]), int(parts[1]))

    def __str__(self) -> str:
        return f"posit({self.nbits},{self.es})"

    @property
    def spec(self) -> str:
        return f"{self.nbits}:{self.es}"

    @property
    def mask(self) -> int:
        return (1 << self.nbits) - 1

    @property
    def nar_bits(self) -> int:
        return 1 << (self.nbits - 1)

    @property
    def maxpos_bits(self) -> int:
        return (1 << (self.nbits - 1)) - 1

    @property
    def max_scale(self) -> int:
        """log2(maxpos); minpos is 2**-max_scale."""
        return (self.nbits - 2) << self.es

    @property
    def maxpos(self) -> Fraction:
        return Fraction(2) ** self.max_scale

    @property
    def minpos(self) -> Fraction:
        return Fraction(1, 2**self.max_scale)

    @property
    def quire_bits(self) -> int:
        return 4 * (self.nbits - 2) * (1 << self.es) + self.nbits

    @property
    def dot_product_limit(self) -> int:
        return (1 << (self.nbits - 1)) - 1

    # useed = 2**(2**es) is never stored
    @property
    def useed(self) -> int:
        return 1 << (1 << self.es)


class Special(enum.Enum):
    ZERO = "zero"
    NAR = "NaR"


@dataclass(frozen=True)
class DecodedPosit:
    """Fields of a nonzero, non-NaR posit.

    value = (-1)**sign * 2**(2**es * k) * 2**exponent * (1 + fraction_numerator / 2**fraction_bits)
    """

    sign: int
    k: int
    exponent: int
    fraction_numerator: int
    fraction_bits: int
    es: int

    @property
    def scale(self) -> int:
        return (self.k << self.es) + self.exponent

    def dyadic(self) -> tuple[int, int]:
        """Exact value as ``(m, t)`` with value ``m * 2**t``."""
        m = (1 << self.fraction_bits) + self.fraction_numerator
        return (-m if self.sign else m), self.scale - self.fraction_bits

    def value(self) -> Fraction:
        m, t = self.dyadic()
        return Fraction(m) * Fraction(2) ** t


def decode(v: "PositValue") -> DecodedPosit | Special:
    cfg, bits = v.config, v.bits
    n, es = cfg.nbits, cfg.es
    if bits == 0:
        return Special.ZERO
    if bits == cfg.nar_bits:
        return Special.NAR
    sign = bits >> (n - 1)
    if sign:
        bits = (-bits) & cfg.mask
    body_len = n - 1
    body = bits & ((1 << body_len) - 1)
    first = (body >> (body_len - 1)) & 1
    run = 0
    while run < body_len and ((body >> (body_len - 1 - run)) & 1) == first:
        run += 1
    k = run - 1 if first else -run
    rest_len = max(body_len - run - 1, 0)
    rest = body & ((1 << rest_len) - 1)
    exp_len = min(es, rest_len)
    exponent = (rest >> (rest_len - exp_len)) << (es - exp_len) if exp_len else 0
    fraction_bits = rest_len - exp_len
    fraction_numerator = rest & ((1 << fraction_bits) - 1)
    return DecodedPosit(sign, k, exponent, fraction_numerator, fraction_bits, es)


def _round_dyadic(cfg: PositConfig, neg: bool, m: int, t: int, sticky: bool = False) -> int:
    """Pattern nearest to m * 2**t (m > 0); ``sticky`` marks a nonzero tail below m's LSB."""
    n, es = cfg.nbits, cfg.es
    scale = m.bit_length() - 1 + t
    k = scale >> es
    if k >= n - 2:
        p = cfg.maxpos_bits
    elif k < -(n - 2):
        p = 1
    else:
        ex = scale - (k << es)
        if k >= 0:
            regime, rlen = ((1 << (k + 1)) - 1) << 1, k + 2
        else:
            regime, rlen = 1, -k + 1
        fb = m.bit_length() - 1
        frac = m - (1 << fb)
        string = (((regime << es) | ex) << fb) | frac
        shift = rlen + es + fb - (n - 1)
        if shift <= 0:
            p = string << -shift
        else:
            p = string >> shift
            rem = string & ((1 << shift) - 1)
            half = 1 << (shift - 1)
            if rem > half or (rem == half and (sticky or p & 1)):
                p += 1
        p = min(max(p, 1), cfg.maxpos_bits)
    return (-p) & cfg.mask if neg else p


def encode_round(x: Fraction | int | float, cfg: PositConfig) -> "PositValue":
    """Nearest posit to ``x`` (ties to even pattern, saturating, no underflow)."""
    if isinstance(x, float):
        if not math.isfinite(x):
            return PositValue(cfg, cfg.nar_bits)
        x = Fraction(x)
    x = Fraction(x)
    if x == 0:
        return PositValue(cfg, 0)
    neg = x < 0
    num, den = abs(x.numerator), x.denominator
    if den & (den - 1) == 0:
        return PositValue(cfg, _round_dyadic(cfg, neg, num, -(den.bit_length() - 1)))
    # Non-dyadic: keep enough quotient bits to round, remainder decides ties.
    extra = cfg.nbits + 8 + max(den.bit_length() - num.bit_length(), 0)
    q, r = divmod(num << extra, den)
    return PositValue(cfg, _round_dyadic(cfg, neg, q, -extra, r != 0))


def _from_dyadic(cfg: PositConfig, m: int, t: int, sticky: bool = False) -> "PositValue":
    if m == 0:
        return PositValue(cfg, 0)
    return PositValue(cfg, _round_dyadic(cfg, m < 0, abs(m), t, sticky))


def _check_same(a: "PositValue", b: "PositValue") -> None:
    if a.config != b.config:
        raise TypeError(f"mixed-format arithmetic: {a.config} vs {b.config}; use convert() first")


def _operands(a: "PositValue", b: "PositValue"):
    _check_same(a, b)
    return decode(a), decode(b)


def add(a: "PositValue", b: "PositValue") -> "PositValue":
    da, db = _operands(a, b)
    if Special.NAR in (da, db):
        return PositValue(a.config, a.config.nar_bits)
    if da is Special.ZERO:
        return b
    if db is Special.ZERO:
        return a
    (ma, ta), (mb, tb) = da.dyadic(), db.dyadic()
    t = min(ta, tb)
    return _from_dyadic(a.config, (ma << (ta - t)) + (mb << (tb - t)), t)


def sub(a: "PositValue", b: "PositValue") -> "PositValue":
    _check_same(a, b)
    return add(a, -b)


def mul(a: "PositValue", b: "PositValue") -> "PositValue":
    da, db = _operands(a, b)
    if Special.NAR in (da, db):
        return PositValue(a.config, a.config.nar_bits)
    if Special.ZERO in (da, db):
        return PositValue(a.config, 0)
    (ma, ta), (mb, tb) = da.dyadic(), db.dyadic()
    return _from_dyadic(a.config, ma * mb, ta + tb)


def div(a: "PositValue", b: "PositValue") -> "PositValue":
    da, db = _operands(a, b)
    cfg = a.config
    if da is Special.NAR or db is Special.NAR or db is Special.ZERO:
        return PositValue(cfg, cfg.nar_bits)
    if da is Special.ZERO:
        return PositValue(cfg, 0)
    (ma, ta), (mb, tb) = da.dyadic(), db.dyadic()
    neg = (ma < 0) != (mb < 0)
    ma, mb = abs(ma), abs(mb)
    # long division: 2*nbits+2 quotient bits plus the remainder as sticky
    shift = 2 * cfg.nbits + 2 + mb.bit_length()
    q, r = divmod(ma << shift, mb)
    return PositValue(cfg, _round_dyadic(cfg, neg, q, ta - tb - shift, r != 0))


def convert(v: "PositValue", target: PositConfig) -> "PositValue":
    d = decode(v)
    if d is Special.ZERO:
        return PositValue(target, 0)
    if d is Special.NAR:
        return PositValue(target, target.nar_bits)
    return _from_dyadic(target, *d.dyadic())


def to_float64(v: "PositValue") -> float:
    d = decode(v)
    if d is Special.ZERO:
        return 0.0
    if d is Special.NAR:
        return math.nan
    m, t = d.dyadic()
    return math.ldexp(float(m), t) if abs(m).bit_length() <= 53 else float(d.value())


def from_float64(x: float, cfg: PositConfig) -> "PositValue":
    return encode_round(float(x), cfg)


def _order_key(v: "PositValue") -> int:
    n = v.config.nbits
    return v.bits - (1 << n) if v.bits >> (n - 1) else v.bits


def compare(a: "PositValue", b: "PositValue") -> int:
    """-1, 0 or 1. NaR sorts below every real."""
    _check_same(a, b)
    ka, kb = _order_key(a), _order_key(b)
    return (ka > kb) - (ka < kb)


def enumerate_values(cfg: PositConfig) -> list[tuple[int, Fraction | None]]:
    """All ``2**nbits`` patterns with their exact values (``None`` for NaR)."""
    out = []
    for bits in range(1 << cfg.nbits):
        d = decode(PositValue(cfg, bits))
        if d is Special.NAR:
            out.append((bits, None))
        elif d is Special.ZERO:
            out.append((bits, Fraction(0)))
        else:
            out.append((bits, d.value()))
    return out


@total_ordering
@dataclass(frozen=True)
class PositValue:
    config: PositConfig
    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.bits < (1 << self.config.nbits):
            raise ValueError(f"pattern {self.bits:#x} does not fit {self.config}")

    @classmethod
    def from_float(cls, x: float, cfg: PositConfig) -> "PositValue":
        return from_float64(x, cfg)

    @property
    def is_nar(self) -> bool:
        return self.bits == self.config.nar_bits

    @property
    def is_zero(self) -> bool:
        return self.bits == 0

    def value(self) -> Fraction | None:
        d = decode(self)
        if d is Special.NAR:
            return None
        return Fraction(0) if d is Special.ZERO else d.value()

    def __float__(self) -> float:
        return to_float64(self)

    def __neg__(self) -> "PositValue":
        return PositValue(self.config, (-self.bits) & self.config.mask)

    def __add__(self, other: "PositValue") -> "PositValue":
        return add(self, other)

    def __sub__(self, other: "PositValue") -> "PositValue":
        return sub(self, other)

    def __mul__(self, other: "PositValue") -> "PositValue":
        return mul(self, other)

    def __truediv__(self, other: "PositValue") -> "PositValue":
        return div(self, other)

    def __lt__(self, other: "PositValue") -> bool:
        return compare(self, other) < 0

    def __repr__(self) -> str:
        width = self.config.nbits
        return f"PositValue({self.config}, 0b{self.bits:0{width}b} = {float(self)!r})"
