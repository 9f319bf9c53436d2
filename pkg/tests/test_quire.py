import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from positnn import kernels as K
from positnn import posit as P
from positnn.posit import PositConfig, PositValue
from positnn.quire import Quire, fused_dot

import oracle


def _exact_dot(a, b, n, es):
    vals = [(oracle.value(x, n, es), oracle.value(y, n, es)) for x, y in zip(a, b)]
    if any(u is None or v is None for u, v in vals):
        return 1 << (n - 1)
    return oracle.round_to_posit(sum((u * v for u, v in vals), Fraction(0)), n, es)


@settings(max_examples=150, deadline=None)
@given(st.sampled_from([(8, 0), (8, 2), (10, 1), (16, 1)]), st.data())
def test_fused_dot_rounds_once(fmt, data):
    n, es = fmt
    cfg = PositConfig(n, es)
    length = data.draw(st.integers(1, 40))
    pat = st.integers(0, (1 << n) - 1).filter(lambda b: b != cfg.nar_bits)
    a = data.draw(st.lists(pat, min_size=length, max_size=length))
    b = data.draw(st.lists(pat, min_size=length, max_size=length))
    want = _exact_dot(a, b, n, es)
    got = fused_dot([PositValue(cfg, x) for x in a], [PositValue(cfg, y) for y in b])
    assert got.bits == want
    arr = K.matmul_nt(np.array([a], dtype=np.uint64), np.array([b], dtype=np.uint64), cfg,
                      quire=True)
    assert int(arr[0, 0]) == want


def test_quire_exact_where_sequential_loses():
    cfg = PositConfig(8, 0)
    big, tiny, one = (P.encode_round(x, cfg) for x in (64, Fraction(1, 64), 1))
    q = Quire(cfg)
    q.add_product(big, big)
    q.add_product(tiny, one)
    q.sub_product(big, big)
    assert q.to_posit() == tiny
    seq = P.sub(P.add(P.mul(big, big), P.mul(tiny, one)), P.mul(big, big))
    assert seq.is_zero


def test_quire_register_layout():
    cfg = PositConfig(8, 0)
    q = Quire(cfg)
    assert q.width_bits == 32
    q.add_product(PositValue(cfg, 1), PositValue(cfg, 1))    # minpos^2 is the LSB
    assert q.signed_value() == 1 and q.limbs() == [1]
    q.clear()
    q.sub_product(PositValue(cfg, 1), PositValue(cfg, 1))
    assert q.signed_value() == -1 and q.limbs() == [0xFFFFFFFF]
    q.clear()
    q.add_posit(P.encode_round(1, cfg))
    assert q.signed_value() == 2 ** (2 * cfg.max_scale)


def test_quire_nar_is_sticky():
    cfg = PositConfig(8, 2)
    q = Quire(cfg)
    q.add_product(PositValue(cfg, cfg.nar_bits), PositValue(cfg, 0x40))
    q.add_product(PositValue(cfg, 0x40), PositValue(cfg, 0x40))
    assert q.to_posit().is_nar
    q.clear()
    assert q.to_posit().is_zero


def test_quire_rejects_foreign_operands():
    q = Quire(PositConfig(8, 0))
    with pytest.raises(TypeError):
        q.add_product(PositValue(PositConfig(8, 1), 1), PositValue(PositConfig(8, 1), 1))
    with pytest.raises(ValueError):
        fused_dot([], [])
    with pytest.raises(ValueError):
        fused_dot([PositValue(PositConfig(8, 0), 1)], [])


@pytest.mark.parametrize("fmt", [(8, 0), (8, 2), (12, 2), (16, 1), (32, 2)])
def test_quire_matmul_is_order_independent(fmt):
    cfg = PositConfig(*fmt)
    rng = np.random.default_rng(3)
    x = rng.normal(size=200) * 4
    a = K.from_float64(x, cfg)
    b = K.from_float64(rng.normal(size=200), cfg)
    ref = K.matmul_nt(a[None], b[None], cfg, quire=True)[0, 0]
    for _ in range(20):
        p = rng.permutation(200)
        assert K.matmul_nt(a[p][None], b[p][None], cfg, quire=True)[0, 0] == ref


def test_quire_matmul_matches_python_quire_wide_formats():
    rng = random.Random(5)
    for fmt in [(24, 2), (32, 2), (64, 3)]:
        cfg = PositConfig(*fmt)
        for _ in range(5):
            length = rng.randint(1, 30)
            a = [rng.randrange(1 << cfg.nbits) for _ in range(length)]
            b = [rng.randrange(1 << cfg.nbits) for _ in range(length)]
            a = [x if x != cfg.nar_bits else 0 for x in a]
            want = fused_dot([PositValue(cfg, x) for x in a], [PositValue(cfg, y) for y in b])
            got = K.matmul_nt(np.array([a], dtype=np.uint64), np.array([b], dtype=np.uint64),
                              cfg, quire=True)
            assert int(got[0, 0]) == want.bits


def test_quire_output_format_and_bias():
    cfg, out = PositConfig(8, 2), PositConfig(12, 2)
    rng = np.random.default_rng(0)
    a = K.from_float64(rng.normal(size=(3, 9)), cfg)
    b = K.from_float64(rng.normal(size=(4, 9)), cfg)
    bias = K.from_float64(rng.normal(size=4), cfg)
    got = K.matmul_nt(a, b, cfg, quire=True, bias=bias, out_cfg=out)
    for i in range(3):
        for j in range(4):
            q = Quire(cfg)
            for x, y in zip(a[i], b[j]):
                q.add_product(PositValue(cfg, int(x)), PositValue(cfg, int(y)))
            q.add_posit(PositValue(cfg, int(bias[j])))
            exact = Fraction(q.signed_value(), 2 ** (2 * cfg.max_scale))
            assert int(got[i, j]) == P.encode_round(exact, out).bits
