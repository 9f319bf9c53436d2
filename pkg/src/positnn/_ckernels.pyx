# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled posit kernels (thin wrappers around ``_csrc/posit_kernels.h``)."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint8_t, uint64_t

cnp.import_array()

cdef extern from "_csrc/posit_kernels.h" nogil:
    uint64_t pk_binary(int op, uint64_t a, uint64_t b, int n, int es)
    uint64_t pk_convert(uint64_t bits, int n, int es, int n2, int es2)
    double pk_to_double(uint64_t bits, int n, int es)
    uint64_t pk_from_double(double x, int n, int es)
    void pk_binary_arr(int op, const uint64_t *a, const uint64_t *b, uint64_t *out, size_t length,
                       int n, int es, const uint8_t *table, const double *dec, const int64_t *ent)
    void pk_build_table(int op, int n, int es, uint8_t *table)
    void pk_fast_build(int n, int es, double *dec, int64_t *ent)
    void pk_build_quire_table(int n, int es, int64_t *tab)
    int pk_quire_fits_i128(int n, int es, size_t k)
    int pk_matmul_quire(const uint64_t *A, const uint64_t *Bt, const uint64_t *bias, uint64_t *C,
                        size_t r0, size_t r1, size_t k, size_t ncol, int n, int es, int out_n,
                        int out_es, const int64_t *qtab)
    int pk_matmul_seq(const uint64_t *A, const uint64_t *Bt, const uint64_t *bias, uint64_t *C,
                      size_t r0, size_t r1, size_t k, size_t ncol, int n, int es, int out_n,
                      int out_es, const uint8_t *mul_tab, const uint8_t *add_tab,
                      const double *dec, const int64_t *ent)
    int PK_FAST_MAX_N
    void pk_matmul_f64(const double *A, const double *Bt, const double *bias, double *C,
                       size_t r0, size_t r1, size_t k, size_t ncol)
    void pk_matmul_f32(const float *A, const float *Bt, const float *bias, float *C,
                       size_t r0, size_t r1, size_t k, size_t ncol)

BACKEND = "compiled"
FAST_MAX_NBITS = PK_FAST_MAX_N


def fast_tables(int n, int es):
    """Decode table and rounding entries for the float64 route (n <= 16)."""
    if n > PK_FAST_MAX_N:
        raise ValueError("float64 route only covers n <= %d" % PK_FAST_MAX_N)
    dec = np.empty(1 << n, dtype=np.float64)
    ent = np.empty(4 * 2048, dtype=np.int64)
    cdef double[::1] d = dec
    cdef int64_t[::1] e = ent
    pk_fast_build(n, es, &d[0], &e[0])
    return dec, ent


def quire_fits(int n, int es, Py_ssize_t k):
    return bool(pk_quire_fits_i128(n, es, k))


def quire_table(int n, int es):
    """Exact products of all operand pairs as int128 quire words (lo, hi)."""
    if n > 8 or not pk_quire_fits_i128(n, es, 1):
        raise ValueError("quire product table needs n <= 8 and a 128-bit quire")
    out = np.empty(2 << (2 * n), dtype=np.int64)
    cdef int64_t[::1] o = out
    pk_build_quire_table(n, es, &o[0])
    return out


def binary(int op, const uint64_t[::1] a, const uint64_t[::1] b, int n, int es, table=None,
           fast=None):
    """Elementwise op. ``table`` (n <= 8) or ``fast`` tables select the quick routes."""
    cdef Py_ssize_t length = a.shape[0]
    out = np.empty(length, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef const uint8_t[::1] tab
    cdef const uint8_t *tp = NULL
    cdef const double[::1] dv
    cdef const int64_t[::1] ev
    cdef const double *dp = NULL
    cdef const int64_t *ep = NULL
    if table is not None:
        tab = table
        tp = &tab[0]
    if fast is not None:
        dv = fast[0]
        ev = fast[1]
        dp = &dv[0]
        ep = &ev[0]
    if length:
        with nogil:
            pk_binary_arr(op, &a[0], &b[0], &o[0], length, n, es, tp, dp, ep)
    return out


def build_table(int op, int n, int es):
    out = np.empty(1 << (2 * n), dtype=np.uint8)
    cdef uint8_t[::1] o = out
    with nogil:
        pk_build_table(op, n, es, &o[0])
    return out


def convert(const uint64_t[::1] a, int n, int es, int n2, int es2):
    cdef Py_ssize_t i, length = a.shape[0]
    out = np.empty(length, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    with nogil:
        for i in range(length):
            o[i] = pk_convert(a[i], n, es, n2, es2)
    return out


def to_double(const uint64_t[::1] a, int n, int es):
    cdef Py_ssize_t i, length = a.shape[0]
    out = np.empty(length, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(length):
            o[i] = pk_to_double(a[i], n, es)
    return out


def from_double(const double[::1] x, int n, int es):
    cdef Py_ssize_t i, length = x.shape[0]
    out = np.empty(length, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    with nogil:
        for i in range(length):
            o[i] = pk_from_double(x[i], n, es)
    return out


def matmul_rows(const uint64_t[:, ::1] A, const uint64_t[:, ::1] Bt, bias, uint64_t[:, ::1] C,
                Py_ssize_t r0, Py_ssize_t r1, int n, int es, bint quire, int out_n, int out_es,
                mul_tab=None, add_tab=None, fast=None, qtab=None):
    """Fill rows [r0, r1) of C with A @ Bt.T (+ bias); releases the GIL."""
    cdef Py_ssize_t k = A.shape[1], ncol = Bt.shape[0]
    cdef const uint64_t[::1] bv
    cdef const uint64_t *bp = NULL
    cdef const uint8_t[::1] mt
    cdef const uint8_t[::1] at
    cdef const uint8_t *mp = NULL
    cdef const uint8_t *ap = NULL
    cdef const uint64_t *pa
    cdef const uint64_t *pb
    cdef const double[::1] dv
    cdef const int64_t[::1] ev
    cdef const int64_t[::1] qv
    cdef const double *dp = NULL
    cdef const int64_t *ep = NULL
    cdef const int64_t *qp = NULL
    cdef int rc = 0
    if r1 <= r0 or ncol == 0:
        return
    if k == 0:
        raise ValueError("empty inner dimension")
    if bias is not None:
        bv = bias
        bp = &bv[0]
    if mul_tab is not None and add_tab is not None:
        mt = mul_tab
        at = add_tab
        mp = &mt[0]
        ap = &at[0]
    if fast is not None:
        dv = fast[0]
        ev = fast[1]
        dp = &dv[0]
        ep = &ev[0]
    if qtab is not None:
        qv = qtab
        qp = &qv[0]
    pa = &A[0, 0]
    pb = &Bt[0, 0]
    with nogil:
        if quire:
            rc = pk_matmul_quire(pa, pb, bp, &C[0, 0], r0, r1, k, ncol, n, es, out_n, out_es, qp)
        else:
            rc = pk_matmul_seq(pa, pb, bp, &C[0, 0], r0, r1, k, ncol, n, es, out_n, out_es, mp, ap,
                               dp, ep)
    if rc != 0:
        raise MemoryError()


def scalar_binary(int op, uint64_t a, uint64_t b, int n, int es):
    return pk_binary(op, a, b, n, es)


def matmul_float_rows(A, Bt, bias, C, Py_ssize_t r0, Py_ssize_t r1):
    """Float reference product for rows [r0, r1): ascending-index multiply then add."""
    cdef Py_ssize_t k = A.shape[1], ncol = Bt.shape[0]
    cdef const double[:, ::1] a64
    cdef const double[:, ::1] b64
    cdef double[:, ::1] c64
    cdef const double[::1] bias64
    cdef const double *bp64 = NULL
    cdef const float[:, ::1] a32
    cdef const float[:, ::1] b32
    cdef float[:, ::1] c32
    cdef const float[::1] bias32
    cdef const float *bp32 = NULL
    if r1 <= r0 or ncol == 0:
        return
    if C.dtype == np.float64:
        a64 = A
        b64 = Bt
        c64 = C
        if bias is not None:
            bias64 = bias
            bp64 = &bias64[0]
        with nogil:
            pk_matmul_f64(&a64[0, 0], &b64[0, 0], bp64, &c64[0, 0], r0, r1, k, ncol)
    else:
        a32 = A
        b32 = Bt
        c32 = C
        if bias is not None:
            bias32 = bias
            bp32 = &bias32[0]
        with nogil:
            pk_matmul_f32(&a32[0, 0], &b32[0, 0], bp32, &c32[0, 0], r0, r1, k, ncol)
