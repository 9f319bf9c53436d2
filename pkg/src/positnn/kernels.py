"""Array-level posit kernels with backend selection.

The compiled extension (``positnn._ckernels``) is used when it imports;
otherwise the numpy/Python fallback takes over.  ``POSITNN_PURE=1`` forces
the fallback.  Both backends expose the same functions and produce identical
bit patterns.

Patterns are carried in ``np.uint64`` arrays, right-aligned.
"""
from __future__ import annotations

import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np

from . import _pykernels
from .posit import PositConfig

log = logging.getLogger(__name__)

ADD, SUB, MUL, DIV = 0, 1, 2, 3
TABLE_MAX_NBITS = 8
FAST_MAX_NBITS = 16
FLOAT_FASTPATH = True
UNARY_TABLE_MAX_NBITS = 16


def _load_compiled():
    if os.environ.get("POSITNN_PURE"):
        return None
    try:
        from . import _ckernels
    except ImportError as exc:  # extension not built
        log.debug("compiled kernels unavailable: %s", exc)
        return None
    return _ckernels


_compiled = _load_compiled()
_impl = _compiled if _compiled is not None else _pykernels
BACKEND: str = _impl.BACKEND


def backends() -> dict:
    """Available kernel modules by name (for tests and benchmarks)."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def use_backend(name: str) -> None:
    global _impl, BACKEND
    _impl = backends()[name]
    BACKEND = name
    _table.cache_clear()
    _fast.cache_clear()
    _qtab.cache_clear()


# Calls to from_float64 are the float -> posit boundary; training audits it.
_boundary_lock = threading.Lock()
float_boundary_calls = 0


def _count_boundary() -> None:
    global float_boundary_calls
    with _boundary_lock:
        float_boundary_calls += 1


def _flat(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.uint64).reshape(-1)


@lru_cache(maxsize=None)
def _table(op: int, nbits: int, es: int) -> np.ndarray | None:
    if nbits > TABLE_MAX_NBITS:
        return None
    # Generated from the exact kernel of the active backend.
    return _impl.build_table(op, nbits, es)


@lru_cache(maxsize=None)
def _fast(nbits: int, es: int):
    """float64-route tables of the compiled backend, or None."""
    if nbits > FAST_MAX_NBITS or not hasattr(_impl, "fast_tables") or not FLOAT_FASTPATH:
        return None
    return _impl.fast_tables(nbits, es)


@lru_cache(maxsize=None)
def _qtab(nbits: int, es: int):
    if nbits > TABLE_MAX_NBITS or not hasattr(_impl, "quire_table"):
        return None
    if not _impl.quire_fits(nbits, es, 1):
        return None
    return _impl.quire_table(nbits, es)


def set_float_fastpath(enabled: bool) -> None:
    """Toggle the float64 route (tests use this to compare against integer arithmetic)."""
    global FLOAT_FASTPATH
    FLOAT_FASTPATH = bool(enabled)
    _pykernels.FLOAT_FASTPATH = bool(enabled)
    _table.cache_clear()
    _fast.cache_clear()


def op_table(op: int, cfg: PositConfig) -> np.ndarray | None:
    return _table(op, cfg.nbits, cfg.es)


def to_float64(bits, cfg: PositConfig) -> np.ndarray:
    a = np.asarray(bits)
    return _impl.to_double(_flat(a), cfg.nbits, cfg.es).reshape(a.shape)


def from_float64(x, cfg: PositConfig) -> np.ndarray:
    """Round float64 values to patterns (the only counted float -> posit entry)."""
    _count_boundary()
    return _from_float64(x, cfg)


def _from_float64(x, cfg: PositConfig) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return _impl.from_double(np.ascontiguousarray(a).reshape(-1), cfg.nbits, cfg.es).reshape(a.shape)


def binary(op: int, a, b, cfg: PositConfig) -> np.ndarray:
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
    shape = a.shape
    n, es = cfg.nbits, cfg.es
    out = _impl.binary(op, _flat(a), _flat(b), n, es, _table(op, n, es), _fast(n, es))
    return out.reshape(shape)


def add(a, b, cfg: PositConfig) -> np.ndarray:
    return binary(ADD, a, b, cfg)


def sub(a, b, cfg: PositConfig) -> np.ndarray:
    return binary(SUB, a, b, cfg)


def mul(a, b, cfg: PositConfig) -> np.ndarray:
    return binary(MUL, a, b, cfg)


def div(a, b, cfg: PositConfig) -> np.ndarray:
    return binary(DIV, a, b, cfg)


def neg(a, cfg: PositConfig) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    return (np.uint64(0) - a) & np.uint64(cfg.mask)


def convert(bits, src: PositConfig, dst: PositConfig) -> np.ndarray:
    a = np.asarray(bits, dtype=np.uint64)
    if src == dst:
        return a.copy()
    return _impl.convert(_flat(a), src.nbits, src.es, dst.nbits, dst.es).reshape(a.shape)


def order_key(bits, cfg: PositConfig) -> np.ndarray:
    """Signed integers whose order is the real order of the patterns (NaR lowest)."""
    a = np.asarray(bits, dtype=np.uint64).astype(np.int64)
    if cfg.nbits == 64:
        return a
    return np.where(a >= cfg.nar_bits, a - (1 << cfg.nbits), a)


def matmul_nt(A, Bt, cfg: PositConfig, *, quire: bool, bias=None,
              out_cfg: PositConfig | None = None, workers: int = 1) -> np.ndarray:
    """``A @ Bt.T`` (+ ``bias`` per column), A is (m, k) and Bt is (n, k).

    With ``quire`` every output is one exact dot product rounded once into
    ``out_cfg``; otherwise products and running sums are rounded in ascending
    inner index.  Rows are split across ``workers`` threads; the per-element
    arithmetic does not depend on the split.
    """
    A = np.ascontiguousarray(A, dtype=np.uint64)
    Bt = np.ascontiguousarray(Bt, dtype=np.uint64)
    if A.ndim != 2 or Bt.ndim != 2 or A.shape[1] != Bt.shape[1]:
        raise ValueError(f"matmul shape mismatch: {A.shape} @ {Bt.shape}.T")
    out_cfg = out_cfg or cfg
    m, ncol = A.shape[0], Bt.shape[0]
    if bias is not None:
        bias = _flat(bias)
        if bias.shape[0] != ncol:
            raise ValueError(f"bias length {bias.shape[0]} != {ncol}")
    C = np.zeros((m, ncol), dtype=np.uint64)
    if m == 0 or ncol == 0:
        return C
    if A.shape[1] == 0:
        if bias is not None:
            C[:] = convert(bias, cfg, out_cfg)[None, :]
        return C
    n, es = cfg.nbits, cfg.es
    mt = at = fast = qtab = None
    if quire:
        qtab = _qtab(n, es)
    else:
        mt, at = _table(MUL, n, es), _table(ADD, n, es)
        fast = _fast(n, es)

    def run(r0: int, r1: int) -> None:
        _impl.matmul_rows(A, Bt, bias, C, r0, r1, n, es, quire, out_cfg.nbits, out_cfg.es,
                          mt, at, fast, qtab)

    _split_rows(run, m, workers)
    return C


def _split_rows(run, m: int, workers: int) -> None:
    """Run ``run(r0, r1)`` over contiguous row blocks, one block per worker."""
    workers = max(1, min(int(workers), m))
    if workers == 1:
        run(0, m)
        return
    step = math.ceil(m / workers)
    bounds = [(r, min(r + step, m)) for r in range(0, m, step)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(run, r0, r1) for r0, r1 in bounds]:
            fut.result()


def matmul_float_nt(A, Bt, dtype, *, bias=None, workers: int = 1) -> np.ndarray:
    """Float reference ``A @ Bt.T`` (+ bias) in ``dtype``: ascending inner index,
    each product rounded then added, bias last.  Same row split as :func:`matmul_nt`."""
    A = np.ascontiguousarray(A, dtype=dtype)
    Bt = np.ascontiguousarray(Bt, dtype=dtype)
    if A.ndim != 2 or Bt.ndim != 2 or A.shape[1] != Bt.shape[1]:
        raise ValueError(f"matmul shape mismatch: {A.shape} @ {Bt.shape}.T")
    m, ncol = A.shape[0], Bt.shape[0]
    if bias is not None:
        bias = np.ascontiguousarray(bias, dtype=dtype).reshape(-1)
    C = np.zeros((m, ncol), dtype=dtype)
    if m == 0 or ncol == 0:
        return C
    if A.shape[1] == 0:
        if bias is not None:
            C[:] = bias[None, :]
        return C
    impl = _impl if hasattr(_impl, "matmul_float_rows") else _pykernels
    _split_rows(lambda r0, r1: impl.matmul_float_rows(A, Bt, bias, C, r0, r1), m, workers)
    return C


# ---------------------------------------------------------------------------
# Elementary functions: evaluated in float64 and rounded once.  Formats up to
# 16 bits use a per-format table built on first use, so steady-state training
# never crosses the float boundary for them.

_UNARY = {
    "exp": np.exp,
    "log": np.log,
    "tanh": np.tanh,
    "sigmoid": lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)),
    "sqrt": np.sqrt,
    "rsqrt": lambda x: 1.0 / np.sqrt(x),
}


def _eval_unary(name: str, x: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        return _UNARY[name](x)


@lru_cache(maxsize=None)
def _unary_table(name: str, nbits: int, es: int) -> np.ndarray:
    cfg = PositConfig(nbits, es)
    pats = np.arange(1 << nbits, dtype=np.uint64)
    return _from_float64(_eval_unary(name, to_float64(pats, cfg)), cfg)


def unary(name: str, bits, cfg: PositConfig) -> np.ndarray:
    a = np.asarray(bits, dtype=np.uint64)
    if cfg.nbits <= UNARY_TABLE_MAX_NBITS:
        return _unary_table(name, cfg.nbits, cfg.es)[a]
    return from_float64(_eval_unary(name, to_float64(a, cfg)), cfg)
