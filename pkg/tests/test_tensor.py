from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from positnn import kernels as K
from positnn import posit as P
from positnn import tensor as T
from positnn.posit import PositConfig, PositValue
from positnn.tensor import FLOAT32, FLOAT64

P8 = PositConfig(8, 2)
P16 = PositConfig(16, 1)


def test_parse_kind():
    assert T.parse_kind("8:2") == P8
    assert T.parse_kind("float32") is FLOAT32
    assert T.kind_str(P16) == "16:1"
    with pytest.raises(ValueError):
        T.parse_kind("bfloat")


def test_const_is_exact_rounding():
    assert T.a_const(Fraction(1, 3), P16) == P.encode_round(Fraction(1, 3), P16).bits
    assert T.a_const(0.1, P16) == P.encode_round(Fraction("0.1"), P16).bits
    assert T.a_const(Fraction(1, 3), FLOAT32) == np.float32(1 / 3)


def test_tensor_views_and_strides():
    t = T.from_values(np.arange(12.0).reshape(3, 4), P16)
    assert t.shape == (3, 4) and t.strides == (4, 1) and t.size == 12
    tt = t.transpose2d()
    assert tt.shape == (4, 3) and tt.strides == (1, 4)
    assert np.array_equal(tt.contiguous().to_float64(), np.arange(12.0).reshape(3, 4).T)
    assert t.reshape(2, 6).shape == (2, 6)
    assert t[1].to_float64().tolist() == [4, 5, 6, 7]


def test_tensor_arithmetic_matches_scalar():
    rng = np.random.default_rng(0)
    a = T.from_values(rng.normal(size=20), P8)
    b = T.from_values(rng.normal(size=20), P8)
    for op, fn in [("__add__", P.add), ("__sub__", P.sub), ("__mul__", P.mul),
                   ("__truediv__", P.div)]:
        got = getattr(a, op)(b).bits()
        for x, y, g in zip(a.bits(), b.bits(), got):
            assert int(g) == fn(PositValue(P8, int(x)), PositValue(P8, int(y))).bits
    half = (a * Fraction(1, 2)).to_float64()
    assert np.allclose(half, a.to_float64() / 2, rtol=0.2)


def test_kind_mismatch_raises():
    a = T.zeros((2,), P8)
    b = T.zeros((2,), P16)
    with pytest.raises(TypeError):
        a + b
    with pytest.raises(TypeError):
        T.matmul(T.zeros((2, 2), P8), T.zeros((2, 2), P16))
    with pytest.raises(ValueError):
        T.matmul(T.zeros((2, 3), P8), T.zeros((2, 3), P8))
    with pytest.raises(TypeError):
        T.Tensor(np.zeros(3), P8)


def test_matmul_and_par_matmul_agree():
    rng = np.random.default_rng(1)
    a = T.from_values(rng.normal(size=(9, 13)), P16)
    b = T.from_values(rng.normal(size=(13, 5)), P16)
    for q in (False, True):
        one = T.matmul(a, b, use_quire=q)
        assert one.shape == (9, 5)
        assert one.bit_equal(T.par_matmul(a, b, 3, use_quire=q))


def test_float_matmul_close_to_numpy():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(6, 7)), rng.normal(size=(7, 3))
    got = T.matmul(T.from_values(a, FLOAT64), T.from_values(b, FLOAT64)).to_float64()
    assert np.allclose(got, a @ b, rtol=1e-12)


def _conv_ref(x, w, b, stride, pad):
    x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = x[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.einsum("nchw,fchw->nf", patch, w)
    return out + (0 if b is None else b[None, :, None, None])


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 2), (2, 1), (3, 0)])
def test_conv2d_float64(stride, pad):
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(2, 3, 9, 8)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    got = T.a_conv2d(x, w, b, FLOAT64, stride=stride, padding=pad)
    assert np.allclose(got, _conv_ref(x, w, b, stride, pad), rtol=1e-10, atol=1e-12)


def test_conv2d_posit_quire_is_exact_dot():
    rng = np.random.default_rng(4)
    x = T.a_from_float64(rng.normal(size=(1, 2, 5, 5)), P8)
    w = T.a_from_float64(rng.normal(size=(3, 2, 3, 3)), P8)
    got = T.a_conv2d(x, w, None, P8, quire=True)
    xv, wv = K.to_float64(x, P8), K.to_float64(w, P8)
    ref = _conv_ref(xv, wv, None, 1, 0)   # products of 8-bit posits are exact in float64
    assert np.array_equal(got, K.from_float64(ref, P8))


def test_conv2d_geometry_errors():
    with pytest.raises(ValueError):
        T.a_conv2d(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)), None, FLOAT64)
    with pytest.raises(ValueError):
        T.a_conv2d(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 3, 3)), None, FLOAT64)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_backward_float64_matches_adjoint(stride, pad):
    rng = np.random.default_rng(5)
    x, w = rng.normal(size=(2, 2, 7, 7)), rng.normal(size=(3, 2, 3, 3))
    y = T.a_conv2d(x, w, None, FLOAT64, stride=stride, padding=pad)
    dy = rng.normal(size=y.shape)
    dx, dw, db = T.a_conv2d_backward(dy, x, w, FLOAT64, stride=stride, padding=pad)
    # <dy, conv(x, w)> is bilinear: its derivatives are the adjoints
    dx_ref = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = 1
        dx_ref[idx] = np.sum(dy * T.a_conv2d(e, w, None, FLOAT64, stride=stride, padding=pad))
    assert np.allclose(dx, dx_ref, atol=1e-10)
    dw_ref = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        e = np.zeros_like(w)
        e[idx] = 1
        dw_ref[idx] = np.sum(dy * T.a_conv2d(x, e, None, FLOAT64, stride=stride, padding=pad))
    assert np.allclose(dw, dw_ref, atol=1e-10)
    assert np.allclose(db, dy.sum(axis=(0, 2, 3)))


def test_maxpool_and_backward():
    x = np.array([[[[1., 5, 2, 0], [3, 4, 8, 1], [0, 0, 1, 1], [9, 0, 1, 2]]]])
    bits = T.a_from_float64(x, P16)
    out, arg = T.a_maxpool(bits, P16, 2)
    assert K.to_float64(out, P16).tolist() == [[[[5, 8], [9, 2]]]]
    dy = T.a_from_float64(np.ones((1, 1, 2, 2)), P16)
    dx = K.to_float64(T.a_maxpool_backward(dy, arg, x.shape, P16, 2), P16)
    assert dx.sum() == 4 and dx[0, 0, 0, 1] == 1 and dx[0, 0, 3, 0] == 1


def test_maxpool_ordering_uses_posit_order():
    # negative patterns have large unsigned values; the max must still be the largest value
    x = T.a_from_float64(np.array([[[[-1.0, -2.0], [-0.5, -3.0]]]]), P8)
    out, _ = T.a_maxpool(x, P8, 2)
    assert K.to_float64(out, P8).item() == -0.5


def test_avgpool_is_sum_times_rounded_reciprocal():
    rng = np.random.default_rng(6)
    x = T.a_from_float64(rng.normal(size=(1, 2, 4, 4)), P8)
    for quire in (False, True):
        got = T.a_avgpool(x, P8, 2, quire=quire)
        win = x[0, 0, :2, :2].ravel()
        s = T.a_sum_rows(win[None], P8, quire=quire)
        want = K.mul(s, T.a_const(Fraction(1, 4), P8), P8)
        assert got[0, 0, 0, 0] == want[0]


def test_overlapping_pool_backward_accumulates():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    dx = T.a_avgpool_backward(np.ones((1, 1, 3, 3)), x.shape, FLOAT64, 2, stride=1)
    assert dx[0, 0, 1, 1] == 1.0 and dx[0, 0, 0, 0] == 0.25


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(4, 8), st.integers(1, 3),
       st.integers(0, 2), st.integers(1, 2))
def test_im2col_shape(n, c, h, k, pad, stride):
    x = np.random.default_rng(0).normal(size=(n, c, h, h))
    if h + 2 * pad < k:
        return
    cols = T.im2col(x, k, k, stride, pad)
    oh = (h + 2 * pad - k) // stride + 1
    assert cols.shape == (n * oh * oh, c * k * k)


def test_conversions_between_kinds():
    v = np.array([0.1, -3.0, 250.0])
    p = T.a_from_float64(v, P16)
    f = T.a_convert(p, P16, FLOAT32)
    assert f.dtype == np.float32
    assert np.array_equal(T.a_convert(f, FLOAT32, P16), p)
    assert np.array_equal(T.a_convert(p, P16, P8), K.convert(p, P16, P8))
    t = T.convert_tensor(T.Tensor(p, P16), FLOAT64)
    assert t.kind is FLOAT64
