"""Pure numpy/Python posit kernels; same surface as the compiled ``_ckernels``.

For ``nbits <= 32`` every posit is an exact float64, so decoding and encoding
are vectorised through float64.  For ``nbits <= 16`` the four operations also
run through float64: products are exact, and sums and quotients of such short
significands round to float64 far enough from any posit rounding boundary that
the second rounding cannot change the result.  Wider formats fall back to the
scalar integer code in :mod:`positnn.posit`.
"""
from __future__ import annotations

import numpy as np

from . import posit as _p

BACKEND = "python"

ADD, SUB, MUL, DIV = 0, 1, 2, 3
FAST_MAX_NBITS = 16
VECTOR_MAX_NBITS = 32

# Tests flip this to prove the float64 route is bit-identical to integer arithmetic.
FLOAT_FASTPATH = True

_SCALAR_OPS = {ADD: _p.add, SUB: _p.sub, MUL: _p.mul, DIV: _p.div}


def _u64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint64)


def to_double(a, n: int, es: int) -> np.ndarray:
    a = _u64(a)
    if n > VECTOR_MAX_NBITS:
        cfg = _p.PositConfig(n, es)
        return np.array([_p.to_float64(_p.PositValue(cfg, int(b))) for b in a.ravel()],
                        dtype=np.float64).reshape(a.shape)
    bits = a.astype(np.int64) & ((1 << n) - 1)
    nar = bits == (1 << (n - 1))
    zero = bits == 0
    neg = (bits >> (n - 1)) & 1
    mag = np.where(neg == 1, (-bits) & ((1 << n) - 1), bits)
    L = n - 1
    body = mag & ((1 << L) - 1)
    first = (body >> (L - 1)) & 1
    y = np.where(first == 1, body ^ ((1 << L) - 1), body)
    rl = L - np.frexp(y.astype(np.float64))[1]
    k = np.where(first == 1, rl - 1, -rl)
    rest_len = np.maximum(L - rl - 1, 0)
    rest = body & ((np.int64(1) << rest_len) - 1)
    exp_len = np.minimum(es, rest_len)
    exponent = (rest >> (rest_len - exp_len)) << (es - exp_len)
    fbits = rest_len - exp_len
    frac = rest & ((np.int64(1) << fbits) - 1)
    sig = ((np.int64(1) << fbits) + frac).astype(np.float64)
    val = np.ldexp(sig, (k << es) + exponent - fbits)
    val = np.where(neg == 1, -val, val)
    val[zero] = 0.0
    val[nar] = np.nan
    return val


def from_double(x, n: int, es: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if n > VECTOR_MAX_NBITS:
        cfg = _p.PositConfig(n, es)
        return np.array([_p.from_float64(float(v), cfg).bits for v in x.ravel()],
                        dtype=np.uint64).reshape(x.shape)
    finite = np.isfinite(x)
    zero = x == 0
    neg = np.signbit(x) & ~zero
    mant, e = np.frexp(np.where(finite, np.abs(x), 1.0))
    scale = e.astype(np.int64) - 1
    frac = np.ldexp(mant, 53).astype(np.int64) - (np.int64(1) << 52)
    k = np.floor_divide(scale, 1 << es)
    ex = scale - (k << es)
    hi = k >= n - 2
    lo = k < -(n - 2)
    kc = np.clip(k, -(n - 2), n - 3)
    rlen = np.where(kc >= 0, kc + 2, -kc + 1)
    regime = np.where(kc >= 0, ((np.int64(1) << (np.maximum(kc, 0) + 1)) - 1) << 1, 1)
    string = (regime << es) | ex
    ln = rlen + es
    # case len >= n: the whole fraction is sticky
    sh = np.clip(ln - n, 0, 62)
    pg_a = string >> sh
    st_a = ((string & ((np.int64(1) << sh) - 1)) != 0) | (frac != 0)
    # case len < n: 1 <= fb <= 52 fraction bits reach the pattern + guard
    fb = np.clip(n - ln, 1, 52)
    pg_b = (string << fb) | (frac >> (52 - fb))
    st_b = (frac & ((np.int64(1) << (52 - fb)) - 1)) != 0
    long_reg = ln >= n
    pg = np.where(long_reg, pg_a, pg_b)
    sticky = np.where(long_reg, st_a, st_b)
    p = pg >> 1
    p = p + ((pg & 1) & (sticky | (p & 1)).astype(np.int64))
    maxpos = (1 << (n - 1)) - 1
    p = np.clip(p, 1, maxpos)
    p = np.where(hi, maxpos, np.where(lo, 1, p))
    p = np.where(neg, (-p) & ((1 << n) - 1), p)
    p = np.where(zero, 0, p)
    p = np.where(finite, p, 1 << (n - 1))
    return p.astype(np.uint64)


def _binary_scalar(op: int, a: np.ndarray, b: np.ndarray, n: int, es: int) -> np.ndarray:
    cfg = _p.PositConfig(n, es)
    f = _SCALAR_OPS[op]
    out = [f(_p.PositValue(cfg, int(x)), _p.PositValue(cfg, int(y))).bits
           for x, y in zip(a.ravel().tolist(), b.ravel().tolist())]
    return np.array(out, dtype=np.uint64).reshape(a.shape)


def _binary_float(op: int, a: np.ndarray, b: np.ndarray, n: int, es: int) -> np.ndarray:
    x, y = to_double(a, n, es), to_double(b, n, es)
    with np.errstate(all="ignore"):
        if op == ADD:
            r = x + y
        elif op == SUB:
            r = x - y
        elif op == MUL:
            r = x * y
        else:
            r = x / y
    return from_double(r, n, es)


def binary(op: int, a, b, n: int, es: int, table=None, fast=None) -> np.ndarray:
    a, b = np.broadcast_arrays(_u64(a), _u64(b))
    if table is not None:
        return table[(a << np.uint64(n)) | b].astype(np.uint64)
    if n <= FAST_MAX_NBITS and FLOAT_FASTPATH:
        return _binary_float(op, a, b, n, es)
    return _binary_scalar(op, a, b, n, es)


def build_table(op: int, n: int, es: int) -> np.ndarray:
    size = 1 << n
    a = np.repeat(np.arange(size, dtype=np.uint64), size)
    b = np.tile(np.arange(size, dtype=np.uint64), size)
    return binary(op, a, b, n, es).astype(np.uint8)


def convert(a, n: int, es: int, n2: int, es2: int) -> np.ndarray:
    a = _u64(a)
    if n <= VECTOR_MAX_NBITS and n2 <= VECTOR_MAX_NBITS:
        return from_double(to_double(a, n, es), n2, es2)
    src, dst = _p.PositConfig(n, es), _p.PositConfig(n2, es2)
    return np.array([_p.convert(_p.PositValue(src, int(v)), dst).bits for v in a.ravel()],
                    dtype=np.uint64).reshape(a.shape)


def _exact_ints(a: np.ndarray, n: int, es: int) -> np.ndarray:
    """Posit values as exact Python ints in units of minpos (object array)."""
    cfg = _p.PositConfig(n, es)
    out = np.empty(a.shape, dtype=object)
    flat = out.reshape(-1)
    for i, bits in enumerate(a.ravel().tolist()):
        d = _p.decode(_p.PositValue(cfg, bits))
        if isinstance(d, _p.Special):
            flat[i] = 0
        else:
            m, t = d.dyadic()
            flat[i] = m << (t + cfg.max_scale)
    return out


def _quire_rows(A, Bt, bias, n, es, out_n, out_es) -> np.ndarray:
    cfg = _p.PositConfig(n, es)
    out_cfg = _p.PositConfig(out_n, out_es)
    s = cfg.max_scale
    nar = (A == cfg.nar_bits).any(axis=1)[:, None] | (Bt == cfg.nar_bits).any(axis=1)[None, :]
    if bias is not None:
        nar = nar | (bias == cfg.nar_bits)[None, :]
    k = A.shape[1]
    if n <= VECTOR_MAX_NBITS and 4 * s + k.bit_length() <= 52:
        # every partial sum is an integer multiple of minpos^2 below 2^53: BLAS is exact
        fa = np.nan_to_num(to_double(A, n, es))
        fb = np.nan_to_num(to_double(Bt, n, es))
        acc = fa @ fb.T
        if bias is not None:
            acc = acc + np.nan_to_num(to_double(bias, n, es))[None, :]
        res = from_double(acc, out_n, out_es)
    else:
        ia, ib = _exact_ints(A, n, es), _exact_ints(Bt, n, es)
        acc = ia.dot(ib.T)
        if bias is not None:
            acc = acc + (_exact_ints(bias, n, es) << s)[None, :]
        res = np.array([_p._from_dyadic(out_cfg, int(v), -2 * s).bits for v in acc.ravel()],
                       dtype=np.uint64).reshape(acc.shape)
    res[nar] = out_cfg.nar_bits
    return res


def _seq_rows(A, Bt, bias, n, es, out_n, out_es, mul_tab, add_tab) -> np.ndarray:
    m, k = A.shape
    acc = np.zeros((m, Bt.shape[0]), dtype=np.uint64)
    for p in range(k):
        prod = binary(MUL, A[:, p][:, None], Bt[:, p][None, :], n, es, mul_tab)
        acc = binary(ADD, acc, np.broadcast_to(prod, acc.shape), n, es, add_tab)
    if bias is not None:
        acc = binary(ADD, acc, np.broadcast_to(bias[None, :], acc.shape), n, es, add_tab)
    if (out_n, out_es) != (n, es):
        acc = convert(acc, n, es, out_n, out_es)
    return acc


def matmul_rows(A, Bt, bias, C, r0, r1, n, es, quire, out_n, out_es, mul_tab=None, add_tab=None,
                fast=None, qtab=None):
    """Fill rows [r0, r1) of C with A @ Bt.T (+ bias); ``fast``/``qtab`` are ignored here."""
    if r1 <= r0 or Bt.shape[0] == 0:
        return
    if A.shape[1] == 0:
        raise ValueError("empty inner dimension")
    A = _u64(A)[r0:r1]
    Bt = _u64(Bt)
    bias = None if bias is None else _u64(bias)
    if quire:
        C[r0:r1] = _quire_rows(A, Bt, bias, n, es, out_n, out_es)
    else:
        C[r0:r1] = _seq_rows(A, Bt, bias, n, es, out_n, out_es, mul_tab, add_tab)


def scalar_binary(op: int, a: int, b: int, n: int, es: int) -> int:
    return int(binary(op, np.array([a]), np.array([b]), n, es)[0])


def matmul_float_rows(A, Bt, bias, C, r0, r1):
    """Float reference product for rows [r0, r1): ascending-index multiply then add."""
    if r1 <= r0 or Bt.shape[0] == 0:
        return
    A = A[r0:r1]
    acc = np.zeros((A.shape[0], Bt.shape[0]), dtype=C.dtype)
    for p in range(A.shape[1]):
        acc = acc + A[:, p][:, None] * Bt[:, p][None, :]
    if bias is not None:
        acc = acc + bias[None, :]
    C[r0:r1] = acc
