/* Bit-exact posit kernels for arbitrary (n, es), n <= 64, es <= 4.
 *
 * Posit patterns are right-aligned in uint64_t. Arithmetic works on an
 * unpacked (neg, scale, sig) triple where sig carries the hidden bit at
 * position 63; every operation produces the exact result (or an exact
 * truncation plus a sticky flag) and rounds once in pk_encode.
 */
#ifndef POSITNN_POSIT_KERNELS_H
#define POSITNN_POSIT_KERNELS_H

#include <stdint.h>
#include <stddef.h>
#include <stdlib.h>
#include <string.h>
#include <math.h>

typedef unsigned __int128 pk_u128;

enum { PK_NORMAL = 0, PK_ZERO = 1, PK_NAR = 2 };
enum { PK_ADD = 0, PK_SUB = 1, PK_MUL = 2, PK_DIV = 3 };

typedef struct {
    int32_t scale;
    uint8_t kind;
    uint8_t neg;
    uint64_t sig;
} pk_unpacked;

static inline uint64_t pk_mask(int n) { return n >= 64 ? ~0ULL : ((1ULL << n) - 1); }
static inline uint64_t pk_nar(int n) { return 1ULL << (n - 1); }

static inline int pk_clz128(pk_u128 x)
{
    uint64_t hi = (uint64_t)(x >> 64);
    if (hi)
        return __builtin_clzll(hi);
    return 64 + __builtin_clzll((uint64_t)x);
}

static inline int32_t pk_floor_shift(int32_t v, int es)
{
    return v >= 0 ? (v >> es) : -((-v + (1 << es) - 1) >> es);
}

static inline pk_unpacked pk_decode(uint64_t bits, int n, int es)
{
    pk_unpacked u = {0, PK_NORMAL, 0, 0};
    uint64_t mask = pk_mask(n);
    bits &= mask;
    if (bits == 0) {
        u.kind = PK_ZERO;
        return u;
    }
    if (bits == pk_nar(n)) {
        u.kind = PK_NAR;
        return u;
    }
    if (bits >> (n - 1)) {
        u.neg = 1;
        bits = (0 - bits) & mask;
    }
    uint64_t x = bits << (65 - n);
    int rl, k;
    if (x >> 63) {
        rl = __builtin_clzll(~x);
        k = rl - 1;
    } else {
        rl = __builtin_clzll(x);
        k = -rl;
    }
    x = (rl + 1 >= 64) ? 0 : (x << (rl + 1));
    int e = 0;
    if (es) {
        e = (int)(x >> (64 - es));
        x <<= es;
    }
    u.scale = k * (1 << es) + e;
    u.sig = (1ULL << 63) | (x >> 1);
    return u;
}

/* Round sig * 2^(scale - 63) (+ a sticky tail) to the nearest posit, ties to
 * the even pattern, saturating at maxpos and never underflowing to zero. */
static inline uint64_t pk_encode(int neg, int32_t scale, uint64_t sig, int sticky, int n, int es)
{
    uint64_t maxpos = pk_nar(n) - 1, p;
    int32_t k = pk_floor_shift(scale, es);
    int32_t ex = scale - k * (1 << es);
    if (k >= n - 2) {
        p = maxpos;
    } else if (k < -(n - 2)) {
        p = 1;
    } else {
        int rlen = k >= 0 ? k + 2 : -k + 1;
        int len = rlen + es;
        uint64_t frac = sig << 1;
        uint64_t pg;
        if (len >= n) {
            pk_u128 reg = k >= 0 ? ((((pk_u128)1 << (k + 1)) - 1) << 1) : (pk_u128)1;
            pk_u128 str = (reg << es) | (pk_u128)(uint64_t)ex;
            int sh = len - n;
            pg = (uint64_t)(str >> sh);
            if (sh && (str & (((pk_u128)1 << sh) - 1)))
                sticky = 1;
            if (frac)
                sticky = 1;
        } else {
            uint64_t reg = k >= 0 ? (((1ULL << (k + 1)) - 1) << 1) : 1ULL;
            uint64_t str = (reg << es) | (uint64_t)ex;
            int fb = n - len;
            pg = (str << fb) | (frac >> (64 - fb));
            if (frac << fb)
                sticky = 1;
        }
        p = pg >> 1;
        if ((pg & 1) && (sticky || (p & 1)))
            p++;
        if (p > maxpos)
            p = maxpos;
        if (p == 0)
            p = 1;
    }
    return neg ? ((0 - p) & pk_mask(n)) : p;
}

static inline uint64_t pk_mul_u(const pk_unpacked *a, const pk_unpacked *b, int n, int es)
{
    pk_u128 pr = (pk_u128)a->sig * b->sig;
    int32_t sc = a->scale + b->scale;
    if (pr >> 127)
        sc += 1;
    else
        pr <<= 1;
    return pk_encode(a->neg ^ b->neg, sc, (uint64_t)(pr >> 64), (uint64_t)pr != 0, n, es);
}

/* b_neg overrides b->neg so subtraction needs no copy. */
static inline uint64_t pk_add_u(const pk_unpacked *a, const pk_unpacked *b, int b_neg, int n, int es)
{
    int a_neg = a->neg;
    const pk_unpacked *x = a, *y = b;
    int x_neg = a_neg, y_neg = b_neg;
    if (b->scale > a->scale || (b->scale == a->scale && b->sig > a->sig)) {
        x = b;
        y = a;
        x_neg = b_neg;
        y_neg = a_neg;
    }
    int d = x->scale - y->scale;
    pk_u128 A = (pk_u128)x->sig << 62;
    pk_u128 B;
    int sticky = 0;
    if (d >= 126) {
        B = 0;
        sticky = 1;
    } else {
        pk_u128 yb = (pk_u128)y->sig << 62;
        B = yb >> d;
        if (d && (yb & (((pk_u128)1 << d) - 1)))
            sticky = 1;
    }
    pk_u128 S;
    if (x_neg == y_neg) {
        S = A + B;
    } else {
        S = A - B;
        if (sticky)
            S -= 1;
        if (S == 0)
            return 0;
    }
    int lz = pk_clz128(S);
    S <<= lz;
    int32_t sc = x->scale + 2 - lz;
    return pk_encode(x_neg, sc, (uint64_t)(S >> 64), sticky || (uint64_t)S != 0, n, es);
}

static inline uint64_t pk_div_u(const pk_unpacked *a, const pk_unpacked *b, int n, int es)
{
    pk_u128 num = (pk_u128)a->sig << 64;
    pk_u128 q = num / b->sig;
    int sticky = (num - q * b->sig) != 0;
    int32_t sc = a->scale - b->scale;
    uint64_t sig;
    if (q >> 64) {
        sticky |= (int)(q & 1);
        sig = (uint64_t)(q >> 1);
    } else {
        sig = (uint64_t)q;
        sc -= 1;
    }
    return pk_encode(a->neg ^ b->neg, sc, sig, sticky, n, es);
}

static inline uint64_t pk_binary(int op, uint64_t a, uint64_t b, int n, int es)
{
    pk_unpacked ua = pk_decode(a, n, es), ub = pk_decode(b, n, es);
    if (ua.kind == PK_NAR || ub.kind == PK_NAR)
        return pk_nar(n);
    switch (op) {
    case PK_ADD:
    case PK_SUB:
        if (ub.kind == PK_ZERO)
            return a & pk_mask(n);
        if (ua.kind == PK_ZERO)
            return op == PK_ADD ? (b & pk_mask(n)) : ((0 - b) & pk_mask(n));
        return pk_add_u(&ua, &ub, op == PK_SUB ? !ub.neg : ub.neg, n, es);
    case PK_MUL:
        if (ua.kind == PK_ZERO || ub.kind == PK_ZERO)
            return 0;
        return pk_mul_u(&ua, &ub, n, es);
    default:
        if (ub.kind == PK_ZERO)
            return pk_nar(n);
        if (ua.kind == PK_ZERO)
            return 0;
        return pk_div_u(&ua, &ub, n, es);
    }
}

static inline uint64_t pk_convert(uint64_t bits, int n, int es, int n2, int es2)
{
    pk_unpacked u = pk_decode(bits, n, es);
    if (u.kind == PK_ZERO)
        return 0;
    if (u.kind == PK_NAR)
        return pk_nar(n2);
    return pk_encode(u.neg, u.scale, u.sig, 0, n2, es2);
}

static inline double pk_to_double(uint64_t bits, int n, int es)
{
    pk_unpacked u = pk_decode(bits, n, es);
    if (u.kind == PK_ZERO)
        return 0.0;
    if (u.kind == PK_NAR)
        return NAN;
    double v = ldexp((double)u.sig, u.scale - 63);
    return u.neg ? -v : v;
}

static inline uint64_t pk_from_double(double x, int n, int es)
{
    if (x == 0.0)
        return 0;
    if (!isfinite(x))
        return pk_nar(n);
    int e;
    double m = frexp(fabs(x), &e);
    uint64_t sig = (uint64_t)ldexp(m, 64);
    return pk_encode(x < 0, e - 1, sig, 0, n, es);
}

/* ------------------------------------------------------------------------ */
/* float64 route for n <= 16. Posits this short are exact doubles; products   */
/* are exact and sums/quotients land far from every posit rounding boundary,  */
/* so one IEEE operation followed by pk_fast_round equals the integer path.   */
/* dec[p] is the double value of pattern p (NaN for NaR); ent holds four      */
/* int64 per double exponent: {base, fbg, pattern if mantissa==0, otherwise}. */

#define PK_FAST_MAX_N 16

static void pk_fast_build(int n, int es, double *dec, int64_t *ent)
{
    uint64_t p, size = 1ULL << n;
    int E;
    for (p = 0; p < size; p++)
        dec[p] = pk_to_double(p, n, es);
    for (E = 0; E < 2048; E++) {
        int64_t *e = ent + 4 * E;
        e[0] = 0;
        e[2] = e[3] = 0;
        if (E == 0) {
            e[1] = -2;
            continue;
        }
        if (E == 2047) {
            e[1] = -3;
            continue;
        }
        int32_t scale = E - 1023;
        int32_t k = pk_floor_shift(scale, es);
        int32_t ex = scale - k * (1 << es);
        int rlen = k >= 0 ? k + 2 : -k + 1;
        int len = rlen + es;
        if (k >= n - 2 || k < -(n - 2) || len >= n) {
            e[1] = -1;
            e[2] = (int64_t)pk_encode(0, scale, 1ULL << 63, 0, n, es);
            e[3] = (int64_t)pk_encode(0, scale, 1ULL << 63, 1, n, es);
            continue;
        }
        uint64_t reg = k >= 0 ? (((1ULL << (k + 1)) - 1) << 1) : 1ULL;
        int fbg = n - len;
        e[0] = (int64_t)((((reg << es) | (uint64_t)ex)) << fbg);
        e[1] = fbg;
    }
}

static inline uint64_t pk_fast_round(const int64_t *ent, double x, uint64_t mask, uint64_t nar)
{
    uint64_t u, p;
    memcpy(&u, &x, sizeof u);
    uint64_t E = (u >> 52) & 0x7ff, mant = u & ((1ULL << 52) - 1);
    const int64_t *e = ent + 4 * E;
    int64_t fbg = e[1];
    if (fbg > 0) {
        int sh = 52 - (int)fbg;
        uint64_t pg = (uint64_t)e[0] | (mant >> sh);
        uint64_t sticky = (mant & ((1ULL << sh) - 1)) != 0;
        p = pg >> 1;
        p += (pg & 1) & (sticky | (p & 1));
    } else if (fbg == -1) {
        p = (uint64_t)(mant ? e[3] : e[2]);
    } else if (fbg == -2) {
        if (mant == 0)
            return 0;
        p = 1;
    } else {
        return nar;
    }
    return (u >> 63) ? ((0 - p) & mask) : p;
}

/* Round x to the nearest posit and return that posit as a double. Where the */
/* pattern keeps at least one fraction bit its LSB is a mantissa bit, so RNE */
/* on the pattern is RNE of the mantissa at that position (a carry lands on  */
/* the next power of two, which is the next pattern). Otherwise go through   */
/* the pattern.                                                               */
static inline double pk_fast_round_d(const int64_t *ent, const double *dec, double x, uint64_t mask,
                                     uint64_t nar)
{
    uint64_t u;
    memcpy(&u, &x, sizeof u);
    int64_t fbg = ent[4 * ((u >> 52) & 0x7ff) + 1];
    if (fbg >= 2) {
        int sh = 53 - (int)fbg;
        uint64_t sign = u & (1ULL << 63), m = u ^ sign;
        m += ((1ULL << (sh - 1)) - 1) + ((m >> sh) & 1);
        m &= ~((1ULL << sh) - 1);
        m |= sign;
        double r;
        memcpy(&r, &m, sizeof r);
        return r;
    }
    return dec[pk_fast_round(ent, x, mask, nar)];
}

static inline uint64_t pk_fast_binary(int op, const double *dec, const int64_t *ent, uint64_t a,
                                      uint64_t b, uint64_t mask, uint64_t nar)
{
    double x = dec[a], y = dec[b], r;
    switch (op) {
    case PK_ADD:
        r = x + y;
        break;
    case PK_SUB:
        r = x - y;
        break;
    case PK_MUL:
        r = x * y;
        break;
    default:
        if (y == 0.0)
            return nar;
        r = x / y;
    }
    return pk_fast_round(ent, r, mask, nar);
}

/* ------------------------------------------------------------------------ */
/* Elementwise array kernels. `table` (nullable) holds 2^(2n) uint8 results   */
/* indexed by (a << n) | b and is only passed for n <= 8.                      */

static void pk_binary_arr(int op, const uint64_t *a, const uint64_t *b, uint64_t *out, size_t len,
                          int n, int es, const uint8_t *table, const double *dec, const int64_t *ent)
{
    size_t i;
    uint64_t mask = pk_mask(n), nar = pk_nar(n);
    if (table) {
        for (i = 0; i < len; i++)
            out[i] = table[((a[i] & mask) << n) | (b[i] & mask)];
        return;
    }
    if (dec && ent) {
        for (i = 0; i < len; i++)
            out[i] = pk_fast_binary(op, dec, ent, a[i] & mask, b[i] & mask, mask, nar);
        return;
    }
    for (i = 0; i < len; i++)
        out[i] = pk_binary(op, a[i], b[i], n, es);
}

static void pk_build_table(int op, int n, int es, uint8_t *table)
{
    uint64_t a, b, size = 1ULL << n;
    for (a = 0; a < size; a++)
        for (b = 0; b < size; b++)
            table[(a << n) | b] = (uint8_t)pk_binary(op, a, b, n, es);
}

/* ------------------------------------------------------------------------ */
/* Quire: exact fixed-point accumulation with LSB weight minpos^2.           */
/* Limbs have radix 2^32 but are stored in int64 so carries can be deferred; */
/* each update adds less than 2^32 per limb, so 2^31 updates cannot overflow. */

typedef struct {
    int32_t pos;   /* bit offset of sig's LSB above minpos, i.e. weight 2^(pos - P) */
    uint8_t kind;
    uint8_t neg;
    uint64_t sig;  /* odd integer significand */
} pk_qop;

static inline int pk_quire_limbs(int n, int es)
{
    int span = 4 * (n - 2) * (1 << es) + 2;
    return span / 32 + 4;
}

static inline int pk_frac_anchor(int n, int es) { return (n - 2) * (1 << es); }

static inline pk_qop pk_qop_from_bits(uint64_t bits, int n, int es)
{
    pk_qop q = {0, PK_ZERO, 0, 0};
    pk_unpacked u = pk_decode(bits, n, es);
    q.kind = u.kind;
    if (u.kind != PK_NORMAL)
        return q;
    int tz = __builtin_ctzll(u.sig);
    q.sig = u.sig >> tz;
    q.pos = u.scale - (63 - tz) + pk_frac_anchor(n, es);
    q.neg = u.neg;
    return q;
}

static inline void pk_limbs_add(int64_t *limbs, pk_u128 v, int pos, int neg)
{
    int j = pos >> 5, off = pos & 31;
    while (v) {
        uint64_t chunk = (uint64_t)v & 0xffffffffULL;
        uint64_t w = chunk << off;
        if (neg) {
            limbs[j] -= (int64_t)(w & 0xffffffffULL);
            limbs[j + 1] -= (int64_t)(w >> 32);
        } else {
            limbs[j] += (int64_t)(w & 0xffffffffULL);
            limbs[j + 1] += (int64_t)(w >> 32);
        }
        v >>= 32;
        j++;
    }
}

/* Small significands (product < 2^32): at most two limbs touched. */
static inline void pk_limbs_add_small(int64_t *limbs, uint64_t v, int pos, int neg)
{
    uint64_t w = v << (pos & 31);
    int j = pos >> 5;
    int64_t lo = (int64_t)(w & 0xffffffffULL), hi = (int64_t)(w >> 32);
    if (neg) {
        limbs[j] -= lo;
        limbs[j + 1] -= hi;
    } else {
        limbs[j] += lo;
        limbs[j + 1] += hi;
    }
}

static inline void pk_limbs_carry(int64_t *limbs, int nl)
{
    int i;
    for (i = 0; i < nl - 1; i++) {
        int64_t c = limbs[i] >> 32;
        limbs[i] -= c * (int64_t)4294967296LL;
        limbs[i + 1] += c;
    }
}

/* Round the accumulated value (LSB weight 2^-(2*anchor)) into (out_n, out_es). */
static uint64_t pk_limbs_round(int64_t *limbs, int nl, int anchor, int out_n, int out_es)
{
    int i, neg = 0;
    pk_limbs_carry(limbs, nl);
    if (limbs[nl - 1] < 0) {
        neg = 1;
        for (i = 0; i < nl; i++)
            limbs[i] = -limbs[i];
        pk_limbs_carry(limbs, nl);
    }
    int t = nl - 1;
    while (t >= 0 && limbs[t] == 0)
        t--;
    if (t < 0)
        return 0;
    pk_u128 acc = (pk_u128)(uint64_t)limbs[t];
    uint64_t l1 = t >= 1 ? (uint64_t)limbs[t - 1] : 0, l2 = t >= 2 ? (uint64_t)limbs[t - 2] : 0;
    acc = (acc << 32) | l1;
    acc = (acc << 32) | l2;
    int sticky = 0;
    for (i = t - 3; i >= 0; i--)
        if (limbs[i]) {
            sticky = 1;
            break;
        }
    int lz = pk_clz128(acc);
    int32_t scale = (127 - lz) + 32 * (t - 2) - 2 * anchor;
    acc <<= lz;
    return pk_encode(neg, scale, (uint64_t)(acc >> 64), sticky || (uint64_t)acc != 0, out_n, out_es);
}

/* ------------------------------------------------------------------------ */
/* Quire accumulation in a signed 128-bit integer, LSB weight minpos^2. Used  */
/* when the product span plus carry headroom for k terms fits in 126 bits.    */

typedef __int128 pk_i128;

static inline int pk_quire_fits_i128(int n, int es, size_t k)
{
    int headroom = 2;
    while (k) {
        headroom++;
        k >>= 1;
    }
    return 4 * pk_frac_anchor(n, es) + headroom <= 126;
}

static inline uint64_t pk_i128_round(pk_i128 acc, int anchor, int out_n, int out_es)
{
    if (acc == 0)
        return 0;
    int neg = acc < 0;
    pk_u128 mag = neg ? (pk_u128)(-acc) : (pk_u128)acc;
    int lz = pk_clz128(mag);
    int32_t scale = (127 - lz) - 2 * anchor;
    mag <<= lz;
    return pk_encode(neg, scale, (uint64_t)(mag >> 64), (uint64_t)mag != 0, out_n, out_es);
}

/* Exact products of every 8-bit operand pair, as int128 fixed point split in  */
/* two int64 words: tab[2*idx] low, tab[2*idx+1] high.                       */
static void pk_build_quire_table(int n, int es, int64_t *tab)
{
    uint64_t a, b, size = 1ULL << n;
    for (a = 0; a < size; a++) {
        pk_qop qa = pk_qop_from_bits(a, n, es);
        for (b = 0; b < size; b++) {
            pk_qop qb = pk_qop_from_bits(b, n, es);
            pk_i128 v = 0;
            if (qa.kind == PK_NORMAL && qb.kind == PK_NORMAL) {
                v = (pk_i128)((pk_u128)(qa.sig * qb.sig) << (qa.pos + qb.pos));
                if (qa.neg ^ qb.neg)
                    v = -v;
            }
            size_t idx = (size_t)((a << n) | b);
            tab[2 * idx] = (int64_t)(uint64_t)v;
            tab[2 * idx + 1] = (int64_t)(v >> 64);
        }
    }
}

static inline pk_i128 pk_qop_i128(const pk_qop *q, int shift)
{
    pk_i128 v = (pk_i128)((pk_u128)q->sig << (q->pos + shift));
    return q->neg ? -v : v;
}

/* ------------------------------------------------------------------------ */
/* Matrix products: C[i, j] = sum_p A[i, p] * Bt[j, p] (+ bias[j]) for rows */
/* i in [r0, r1). A is m x k, Bt is ncol x k, C is m x ncol, all row-major. */
/* A NaR anywhere in a row of A or column of Bt (or the bias) yields NaR.   */

static void pk_nar_flags(const uint64_t *M, size_t rows, size_t k, uint64_t mask, uint64_t nar,
                         uint8_t *flags)
{
    size_t i, p;
    for (i = 0; i < rows; i++) {
        flags[i] = 0;
        for (p = 0; p < k; p++)
            if ((M[i * k + p] & mask) == nar) {
                flags[i] = 1;
                break;
            }
    }
}

static int pk_matmul_quire(const uint64_t *A, const uint64_t *Bt, const uint64_t *bias, uint64_t *C,
                           size_t r0, size_t r1, size_t k, size_t ncol, int n, int es, int out_n,
                           int out_es, const int64_t *qtab)
{
    size_t i, j, p;
    int anchor = pk_frac_anchor(n, es);
    uint64_t mask = pk_mask(n), nar = pk_nar(n), out_nar = pk_nar(out_n);
    int fits = pk_quire_fits_i128(n, es, k + 1);
    int nl = pk_quire_limbs(n, es);
    uint8_t *bnar = (uint8_t *)malloc(ncol + 1);
    pk_qop *bq = (pk_qop *)malloc(sizeof(pk_qop) * (ncol * k + 1));
    pk_qop *aq = (pk_qop *)malloc(sizeof(pk_qop) * (k + 1));
    pk_qop *biq = (pk_qop *)malloc(sizeof(pk_qop) * (ncol + 1));
    int64_t *limbs = (int64_t *)malloc(sizeof(int64_t) * nl);
    int rc = 0;
    if (!bnar || !bq || !aq || !biq || !limbs) {
        rc = -1;
        goto done;
    }
    pk_nar_flags(Bt, ncol, k, mask, nar, bnar);
    for (j = 0; j < ncol; j++) {
        biq[j] = bias ? pk_qop_from_bits(bias[j], n, es) : (pk_qop){0, PK_ZERO, 0, 0};
        if (biq[j].kind == PK_NAR)
            bnar[j] = 1;
    }
    if (!qtab)
        for (p = 0; p < ncol * k; p++)
            bq[p] = pk_qop_from_bits(Bt[p], n, es);
    for (i = r0; i < r1; i++) {
        const uint64_t *arow = A + i * k;
        uint8_t anar;
        pk_nar_flags(arow, 1, k, mask, nar, &anar);
        if (!qtab)
            for (p = 0; p < k; p++)
                aq[p] = pk_qop_from_bits(arow[p], n, es);
        for (j = 0; j < ncol; j++) {
            uint64_t *dst = C + i * ncol + j;
            if (anar || bnar[j]) {
                *dst = out_nar;
                continue;
            }
            if (qtab && fits) {
                const uint64_t *brow = Bt + j * k;
                pk_i128 acc = 0;
                for (p = 0; p < k; p++) {
                    size_t idx = (size_t)(((arow[p] & mask) << n) | (brow[p] & mask));
                    acc += ((pk_i128)qtab[2 * idx + 1] << 64) | (pk_i128)(uint64_t)qtab[2 * idx];
                }
                if (biq[j].kind == PK_NORMAL)
                    acc += pk_qop_i128(&biq[j], anchor);
                *dst = pk_i128_round(acc, anchor, out_n, out_es);
                continue;
            }
            if (qtab) {
                /* table requested but the quire is wider than 126 bits */
                for (p = 0; p < k; p++)
                    aq[p] = pk_qop_from_bits(arow[p], n, es);
                for (p = 0; p < ncol * k; p++)
                    bq[p] = pk_qop_from_bits(Bt[p], n, es);
                qtab = NULL;
            }
            const pk_qop *brow = bq + j * k;
            if (fits) {
                pk_i128 acc = 0;
                for (p = 0; p < k; p++) {
                    const pk_qop *x = aq + p, *y = brow + p;
                    if (x->kind | y->kind)
                        continue;
                    pk_i128 v = (pk_i128)((pk_u128)(x->sig * y->sig) << (x->pos + y->pos));
                    acc += (x->neg ^ y->neg) ? -v : v;
                }
                if (biq[j].kind == PK_NORMAL)
                    acc += pk_qop_i128(&biq[j], anchor);
                *dst = pk_i128_round(acc, anchor, out_n, out_es);
                continue;
            }
            int small = (n - 2) <= 16;
            memset(limbs, 0, sizeof(int64_t) * nl);
            for (p = 0; p < k; p++) {
                const pk_qop *x = aq + p, *y = brow + p;
                if (x->kind | y->kind)
                    continue;
                if (small)
                    pk_limbs_add_small(limbs, x->sig * y->sig, x->pos + y->pos, x->neg ^ y->neg);
                else
                    pk_limbs_add(limbs, (pk_u128)x->sig * y->sig, x->pos + y->pos, x->neg ^ y->neg);
            }
            if (biq[j].kind == PK_NORMAL)
                pk_limbs_add(limbs, (pk_u128)biq[j].sig, biq[j].pos + anchor, biq[j].neg);
            *dst = pk_limbs_round(limbs, nl, anchor, out_n, out_es);
        }
    }
done:
    free(bnar);
    free(bq);
    free(aq);
    free(biq);
    free(limbs);
    return rc;
}

/* Sequential multiply-add in ascending p, every step rounded into (n, es). */
static int pk_matmul_seq(const uint64_t *A, const uint64_t *Bt, const uint64_t *bias, uint64_t *C,
                         size_t r0, size_t r1, size_t k, size_t ncol, int n, int es, int out_n,
                         int out_es, const uint8_t *mul_tab, const uint8_t *add_tab,
                         const double *dec, const int64_t *ent)
{
    size_t i, j, p;
    uint64_t mask = pk_mask(n), nar = pk_nar(n);
    int same = (out_n == n && out_es == es);
    if (mul_tab && add_tab) {
        /* four independent accumulator chains hide the table-load latency */
        for (i = r0; i < r1; i++) {
            const uint64_t *arow = A + i * k;
            for (j = 0; j < ncol; j += 4) {
                size_t jn = ncol - j < 4 ? ncol - j : 4, t;
                const uint64_t *b0 = Bt + j * k;
                const uint64_t *b1 = jn > 1 ? b0 + k : b0, *b2 = jn > 2 ? b0 + 2 * k : b0;
                const uint64_t *b3 = jn > 3 ? b0 + 3 * k : b0;
                uint64_t acc[4] = {0, 0, 0, 0};
                for (p = 0; p < k; p++) {
                    uint64_t ap = (arow[p] & mask) << n;
                    acc[0] = add_tab[(acc[0] << n) | mul_tab[ap | (b0[p] & mask)]];
                    acc[1] = add_tab[(acc[1] << n) | mul_tab[ap | (b1[p] & mask)]];
                    acc[2] = add_tab[(acc[2] << n) | mul_tab[ap | (b2[p] & mask)]];
                    acc[3] = add_tab[(acc[3] << n) | mul_tab[ap | (b3[p] & mask)]];
                }
                for (t = 0; t < jn; t++) {
                    uint64_t r = acc[t];
                    if (bias)
                        r = add_tab[(r << n) | (bias[j + t] & mask)];
                    C[i * ncol + j + t] = same ? r : pk_convert(r, n, es, out_n, out_es);
                }
            }
        }
        return 0;
    }
    if (dec && ent) {
        double *bd = (double *)malloc(sizeof(double) * (ncol * k + 1));
        double *ad = (double *)malloc(sizeof(double) * (k + 1));
        if (!bd || !ad) {
            free(bd);
            free(ad);
            return -1;
        }
        for (p = 0; p < ncol * k; p++)
            bd[p] = dec[Bt[p] & mask];
        for (i = r0; i < r1; i++) {
            for (p = 0; p < k; p++)
                ad[p] = dec[A[i * k + p] & mask];
            for (j = 0; j < ncol; j += 4) {
                size_t jn = ncol - j < 4 ? ncol - j : 4, t;
                const double *bb[4];
                double acc[4] = {0.0, 0.0, 0.0, 0.0};
                for (t = 0; t < 4; t++)
                    bb[t] = bd + (j + (t < jn ? t : 0)) * k;
                /* acc always holds a posit value, so the final pattern lookup is exact */
                for (p = 0; p < k; p++) {
                    double a = ad[p];
                    for (t = 0; t < 4; t++) {
                        double x = a * bb[t][p];
                        if (x == 0.0)
                            continue;
                        x = pk_fast_round_d(ent, dec, x, mask, nar);
                        acc[t] = pk_fast_round_d(ent, dec, acc[t] + x, mask, nar);
                    }
                }
                for (t = 0; t < jn; t++) {
                    double v = acc[t];
                    if (bias)
                        v = v + dec[bias[j + t] & mask];
                    uint64_t r = pk_fast_round(ent, v, mask, nar);
                    C[i * ncol + j + t] = same ? r : pk_convert(r, n, es, out_n, out_es);
                }
            }
        }
        free(bd);
        free(ad);
        return 0;
    }
    pk_unpacked *bu = (pk_unpacked *)malloc(sizeof(pk_unpacked) * (ncol * k + 1));
    pk_unpacked *au = (pk_unpacked *)malloc(sizeof(pk_unpacked) * (k + 1));
    if (!bu || !au) {
        free(bu);
        free(au);
        return -1;
    }
    for (p = 0; p < ncol * k; p++)
        bu[p] = pk_decode(Bt[p], n, es);
    for (i = r0; i < r1; i++) {
        for (p = 0; p < k; p++)
            au[p] = pk_decode(A[i * k + p], n, es);
        for (j = 0; j < ncol; j++) {
            const pk_unpacked *brow = bu + j * k;
            pk_unpacked acc = {0, PK_ZERO, 0, 0};
            int is_nar = 0;
            for (p = 0; p < k; p++) {
                const pk_unpacked *x = au + p, *y = brow + p;
                if (x->kind == PK_NAR || y->kind == PK_NAR) {
                    is_nar = 1;
                    break;
                }
                if (x->kind == PK_ZERO || y->kind == PK_ZERO)
                    continue;
                uint64_t prod = pk_mul_u(x, y, n, es);
                if (acc.kind == PK_ZERO) {
                    acc = pk_decode(prod, n, es);
                } else {
                    pk_unpacked pu = pk_decode(prod, n, es);
                    acc = pk_decode(pk_add_u(&acc, &pu, pu.neg, n, es), n, es);
                }
            }
            uint64_t bits;
            if (is_nar) {
                bits = nar;
            } else {
                bits = acc.kind == PK_ZERO ? 0 : pk_encode(acc.neg, acc.scale, acc.sig, 0, n, es);
                if (bias)
                    bits = pk_binary(PK_ADD, bits, bias[j], n, es);
            }
            C[i * ncol + j] = same ? bits : pk_convert(bits, n, es, out_n, out_es);
        }
    }
    free(bu);
    free(au);
    return 0;
}

/* Reference float matmul: plain IEEE multiply then add in ascending p, bias   */
/* last, no fused multiply-add (the build disables contraction).               */
#define PK_FLOAT_MATMUL(NAME, T)                                                              \
    static void NAME(const T *A, const T *Bt, const T *bias, T *C, size_t r0, size_t r1,    \
                     size_t k, size_t ncol)                                                   \
    {                                                                                         \
        size_t i, j, p;                                                                       \
        for (i = r0; i < r1; i++)                                                             \
            for (j = 0; j < ncol; j++) {                                                      \
                const T *a = A + i * k, *b = Bt + j * k;                                      \
                T acc = 0;                                                                    \
                for (p = 0; p < k; p++) {                                                     \
                    T prod = a[p] * b[p];                                                     \
                    acc = acc + prod;                                                         \
                }                                                                             \
                if (bias)                                                                     \
                    acc = acc + bias[j];                                                      \
                C[i * ncol + j] = acc;                                                        \
            }                                                                                 \
    }

PK_FLOAT_MATMUL(pk_matmul_f64, double)
PK_FLOAT_MATMUL(pk_matmul_f32, float)

#endif
