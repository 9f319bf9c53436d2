"""Exact fixed-point accumulator for sums of posit products.

The accumulator is a two's-complement integer of ``width_bits`` bits whose
least significant bit weighs ``minpos**2``.  Every posit is an integer
multiple of ``minpos``, so every product lands exactly on the grid and
nothing is rounded until :meth:`Quire.to_posit`.
"""
from __future__ import annotations

from typing import Sequence

from . import posit as _p
from .posit import PositConfig, PositValue

__all__ = ["Quire", "fused_dot"]


def _units(v: PositValue) -> int | None:
    """Exact value of ``v`` in units of minpos (None for NaR)."""
    d = _p.decode(v)
    if d is _p.Special.ZERO:
        return 0
    if d is _p.Special.NAR:
        return None
    m, t = d.dyadic()
    return m << (t + v.config.max_scale)


class Quire:
    """A quire for one posit format.

    Overflow past the carry guard (more than ``dot_product_limit`` worst-case
    products) wraps modulo ``2**width_bits`` like the hardware register would;
    it is documented rather than checked.
    """

    def __init__(self, config: PositConfig):
        self.config = config
        self.width_bits = config.quire_bits
        self._mod = 1 << self.width_bits
        self.acc = 0
        self.nar_flag = False

    def clear(self) -> None:
        self.acc = 0
        self.nar_flag = False

    def _check(self, *vals: PositValue) -> None:
        for v in vals:
            if v.config != self.config:
                raise TypeError(f"quire for {self.config} cannot take a {v.config} operand")

    def _accumulate(self, delta: int) -> None:
        self.acc = (self.acc + delta) % self._mod

    def add_product(self, a: PositValue, b: PositValue) -> None:
        self._check(a, b)
        ua, ub = _units(a), _units(b)
        if ua is None or ub is None:
            self.nar_flag = True
            return
        self._accumulate(ua * ub)

    def sub_product(self, a: PositValue, b: PositValue) -> None:
        self._check(a, b)
        ua, ub = _units(a), _units(b)
        if ua is None or ub is None:
            self.nar_flag = True
            return
        self._accumulate(-ua * ub)

    def add_posit(self, a: PositValue) -> None:
        self._check(a)
        ua = _units(a)
        if ua is None:
            self.nar_flag = True
            return
        self._accumulate(ua << self.config.max_scale)

    def signed_value(self) -> int:
        """Accumulator as a signed integer (units of minpos squared)."""
        if self.acc >> (self.width_bits - 1):
            return self.acc - self._mod
        return self.acc

    def limbs(self) -> list[int]:
        """Little-endian 64-bit limbs of the two's-complement register."""
        count = -(-self.width_bits // 64)
        return [(self.acc >> (64 * i)) & 0xFFFFFFFFFFFFFFFF for i in range(count)]

    def to_posit(self) -> PositValue:
        if self.nar_flag:
            return PositValue(self.config, self.config.nar_bits)
        return _p._from_dyadic(self.config, self.signed_value(), -2 * self.config.max_scale)

    def __repr__(self) -> str:
        return f"Quire({self.config}, value={self.signed_value()}*minpos^2, nar={self.nar_flag})"


def fused_dot(a: Sequence[PositValue], b: Sequence[PositValue]) -> PositValue:
    """Dot product accumulated exactly and rounded once."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("fused_dot needs at least one element to know the format")
    q = Quire(a[0].config)
    for x, y in zip(a, b):
        q.add_product(x, y)
    return q.to_posit()
