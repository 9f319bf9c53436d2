"""Strided tensors over posit patterns or reference floats.

A :class:`Tensor` is a shape/stride view over a flat element buffer (numpy
supplies the storage and the stride bookkeeping) tagged with a scalar *kind*:
either a :class:`~positnn.posit.PositConfig` (elements are bit patterns in
``uint64``) or one of the reference float kinds :data:`FLOAT32` and
:data:`FLOAT64`.  Layers are written once against the ``a_*`` array
functions below, which dispatch on the kind.

Every posit result is produced by the kernels in :mod:`positnn.kernels`; the
only float -> posit conversion is :func:`a_from_float64` (counted there).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels as K
from . import posit as _p
from .posit import PositConfig

__all__ = [
    "FloatKind", "FLOAT32", "FLOAT64", "Kind", "parse_kind", "is_posit", "Tensor",
    "zeros", "full", "from_values", "from_bits", "matmul", "par_matmul", "conv2d",
    "pool2d_max", "pool2d_avg", "convert_tensor",
]


@dataclass(frozen=True)
class FloatKind:
    """Hardware IEEE floats used as the reference arithmetic."""

    name: str

    @property
    def dtype(self):
        return np.dtype(self.name)

    def __str__(self) -> str:
        return self.name


FLOAT32 = FloatKind("float32")
FLOAT64 = FloatKind("float64")
Kind = Union[PositConfig, FloatKind]


def parse_kind(text: str) -> Kind:
    """``"8:2"`` -> posit(8,2); ``"float32"``/``"float64"`` -> float kinds."""
    t = text.strip().lower()
    if t in ("float32", "f32", "float"):
        return FLOAT32
    if t in ("float64", "f64", "double"):
        return FLOAT64
    return PositConfig.parse(t)


def kind_str(kind: Kind) -> str:
    return kind.spec if isinstance(kind, PositConfig) else kind.name


def is_posit(kind: Kind) -> bool:
    return isinstance(kind, PositConfig)


def storage_dtype(kind: Kind):
    return np.dtype(np.uint64) if is_posit(kind) else kind.dtype


# ---------------------------------------------------------------------------
# Array-level arithmetic, dispatched on kind.

def a_zeros(shape, kind: Kind) -> np.ndarray:
    # pattern 0 is posit zero, so both kinds are plain zero buffers
    return np.zeros(shape, dtype=storage_dtype(kind))


@lru_cache(maxsize=None)
def _const(x: Fraction, kind: Kind):
    if is_posit(kind):
        return np.uint64(_p.encode_round(x, kind).bits)
    return kind.dtype.type(float(x))


def a_const(x, kind: Kind):
    """Scalar constant rounded once from its exact value (not a boundary crossing)."""
    return _const(Fraction(x), kind)


def a_full(shape, x, kind: Kind) -> np.ndarray:
    return np.full(shape, a_const(x, kind), dtype=storage_dtype(kind))


def a_from_float64(x, kind: Kind) -> np.ndarray:
    if is_posit(kind):
        return K.from_float64(x, kind)
    return np.asarray(x, dtype=np.float64).astype(kind.dtype)


def a_to_float64(x, kind: Kind) -> np.ndarray:
    if is_posit(kind):
        return K.to_float64(x, kind)
    return np.asarray(x).astype(np.float64)


def a_convert(x, src: Kind, dst: Kind) -> np.ndarray:
    if src == dst:
        return np.array(x, copy=True)
    if is_posit(src) and is_posit(dst):
        return K.convert(x, src, dst)
    if not is_posit(src) and not is_posit(dst):
        return np.asarray(x).astype(dst.dtype)
    return a_from_float64(a_to_float64(x, src), dst)


def _float_op(op: int, a, b, dtype):
    a = np.asarray(a, dtype=dtype)
    b = np.asarray(b, dtype=dtype)
    with np.errstate(all="ignore"):
        if op == K.ADD:
            return a + b
        if op == K.SUB:
            return a - b
        if op == K.MUL:
            return a * b
        return a / b


def a_binary(op: int, a, b, kind: Kind) -> np.ndarray:
    if is_posit(kind):
        return K.binary(op, a, b, kind)
    return _float_op(op, a, b, kind.dtype)


def a_add(a, b, kind):
    return a_binary(K.ADD, a, b, kind)


def a_sub(a, b, kind):
    return a_binary(K.SUB, a, b, kind)


def a_mul(a, b, kind):
    return a_binary(K.MUL, a, b, kind)


def a_div(a, b, kind):
    return a_binary(K.DIV, a, b, kind)


def a_neg(a, kind: Kind) -> np.ndarray:
    if is_posit(kind):
        return K.neg(a, kind)
    return -np.asarray(a)


def a_unary(name: str, x, kind: Kind) -> np.ndarray:
    """Elementary function; posits evaluate in float64 and round once."""
    if is_posit(kind):
        return K.unary(name, x, kind)
    x = np.asarray(x, dtype=kind.dtype)
    with np.errstate(all="ignore"):
        return K._UNARY[name](x).astype(kind.dtype)


def a_key(x, kind: Kind) -> np.ndarray:
    """Values whose numpy ordering is the real ordering of the elements."""
    if is_posit(kind):
        return K.order_key(x, kind)
    return np.asarray(x)


def a_positive(x, kind: Kind) -> np.ndarray:
    return a_key(x, kind) > 0


def a_matmul_nt(A, Bt, kind: Kind, *, quire: bool = False, bias=None,
                out_kind: Kind | None = None, workers: int = 1) -> np.ndarray:
    """``A @ Bt.T`` (+ bias); quire only affects posit kinds."""
    out_kind = out_kind or kind
    if is_posit(kind):
        if is_posit(out_kind):
            return K.matmul_nt(A, Bt, kind, quire=quire, bias=bias, out_cfg=out_kind,
                               workers=workers)
        res = K.matmul_nt(A, Bt, kind, quire=quire, bias=bias, workers=workers)
        return a_convert(res, kind, out_kind)
    res = K.matmul_float_nt(A, Bt, kind.dtype, bias=bias, workers=workers)
    return res if out_kind == kind else a_convert(res, kind, out_kind)


def a_sum_rows(M, kind: Kind, *, quire: bool = False, out_kind: Kind | None = None,
               workers: int = 1) -> np.ndarray:
    """Row sums of a 2-D array: one quire per row, or sequential adds in column order."""
    M = np.asarray(M)
    ones = a_full((1, M.shape[1]), 1, kind)
    return a_matmul_nt(M, ones, kind, quire=quire, out_kind=out_kind, workers=workers)[:, 0]


def a_equal_bits(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# Convolution and pooling on arrays (N, C, H, W).

def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out <= 0:
        raise ValueError(f"window {k} does not fit input {size} with padding {pad}")
    return out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Rows are output positions (n, oh, ow); columns are (c, i, j) in that order."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c = x.shape[:2]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def a_conv2d(x, w, bias, kind: Kind, *, stride: int = 1, padding: int = 0, quire: bool = False,
             out_kind: Kind | None = None, workers: int = 1) -> np.ndarray:
    """Cross-correlation; each output is one dot over (c, i, j) plus bias."""
    x, w = np.asarray(x), np.asarray(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d geometry mismatch: input {x.shape}, weight {w.shape}")
    n, _, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh, ow = _out_size(h, kh, stride, padding), _out_size(wd, kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding)
    out = a_matmul_nt(cols, w.reshape(f, -1), kind, quire=quire, bias=bias, out_kind=out_kind,
                      workers=workers)
    return np.ascontiguousarray(out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))


def a_conv2d_backward(dy, x, w, kind: Kind, *, stride: int = 1, padding: int = 0,
                      quire: bool = False, grad_kind: Kind | None = None, need_dx: bool = True,
                      dx_quire: bool | None = None, workers: int = 1, cols=None):
    """Gradients of :func:`a_conv2d`; returns (dx or None, dw, db).

    ``dw`` and ``db`` are accumulated in ``kind`` and rounded into ``grad_kind``;
    ``dx_quire`` (default ``quire``) selects the accumulation for ``dx``.
    ``dx`` is the full correlation of the stride-dilated ``dy`` with the flipped
    kernels, computed through the same matmul kernel.
    """
    dy, x, w = np.asarray(dy), np.asarray(x), np.asarray(w)
    grad_kind = grad_kind or kind
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh, ow = dy.shape[2], dy.shape[3]
    if cols is None:
        cols = im2col(x, kh, kw, stride, padding)
    dy_t = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)).reshape(f, n * oh * ow)
    dw = a_matmul_nt(dy_t, np.ascontiguousarray(cols.T), kind, quire=quire, out_kind=grad_kind,
                     workers=workers).reshape(w.shape)
    db = a_sum_rows(dy_t, kind, quire=quire, out_kind=grad_kind, workers=workers)
    dx = None
    if need_dx:
        hp, wp = h + 2 * padding, wd + 2 * padding
        dil = a_zeros((n, f, (oh - 1) * stride + 1, (ow - 1) * stride + 1), kind)
        dil[:, :, ::stride, ::stride] = dy
        extra_h = hp - ((oh - 1) * stride + kh)
        extra_w = wp - ((ow - 1) * stride + kw)
        dil = np.pad(dil, ((0, 0), (0, 0), (kh - 1, kh - 1 + extra_h), (kw - 1, kw - 1 + extra_w)))
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dxq = quire if dx_quire is None else dx_quire
        full = a_conv2d(dil, wf, None, kind, quire=dxq, workers=workers)
        dx = np.ascontiguousarray(full[:, :, padding:padding + h, padding:padding + wd])
    return dx, dw, db


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.reshape(win.shape[:4] + (kh * kw,))


def a_maxpool(x, kind: Kind, window: int, stride: int | None = None):
    """Returns (out, argmax) with argmax the flat offset inside each window."""
    stride = stride or window
    x = np.asarray(x)
    _out_size(x.shape[2], window, stride, 0)
    win = _windows(x, window, window, stride)
    arg = np.argmax(a_key(win, kind), axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def _scatter(dy, arg, shape, kind: Kind, window: int, stride: int) -> np.ndarray:
    """Send dy[..., pos] to the input element at window offset arg (or all offsets)."""
    dx = a_zeros(shape, kind)
    oh, ow = dy.shape[2], dy.shape[3]
    overlap = stride < window
    zero = a_const(0, kind)
    for o in range(window * window):
        oi, oj = divmod(o, window)
        sl = dx[:, :, oi:oi + stride * (oh - 1) + 1:stride, oj:oj + stride * (ow - 1) + 1:stride]
        contrib = dy if arg is None else np.where(arg == o, dy, zero)
        if overlap:
            sl[...] = a_add(sl, contrib, kind)
        elif arg is None:
            sl[...] = contrib
        else:
            sl[...] = np.where(arg == o, dy, sl)
    return dx


def a_maxpool_backward(dy, arg, shape, kind: Kind, window: int, stride: int | None = None):
    return _scatter(np.asarray(dy), arg, shape, kind, window, stride or window)


def a_avgpool(x, kind: Kind, window: int, stride: int | None = None, *, quire: bool = False,
              workers: int = 1) -> np.ndarray:
    """Window sum (quire or sequential) times the rounded reciprocal of the window size."""
    stride = stride or window
    x = np.asarray(x)
    _out_size(x.shape[2], window, stride, 0)
    win = _windows(x, window, window, stride)
    s = a_sum_rows(win.reshape(-1, window * window), kind, quire=quire, workers=workers)
    out = a_mul(s, a_const(Fraction(1, window * window), kind), kind)
    return out.reshape(win.shape[:4])


def a_avgpool_backward(dy, shape, kind: Kind, window: int, stride: int | None = None):
    g = a_mul(dy, a_const(Fraction(1, window * window), kind), kind)
    return _scatter(g, None, shape, kind, window, stride or window)


# ---------------------------------------------------------------------------
# Tensor

class Tensor:
    """Shape and strides over a flat buffer of one scalar kind."""

    __slots__ = ("_a", "kind")

    def __init__(self, array: np.ndarray, kind: Kind):
        array = np.asarray(array)
        want = storage_dtype(kind)
        if array.dtype != want:
            raise TypeError(f"{kind_str(kind)} tensors store {want}, got {array.dtype}")
        self._a = array
        self.kind = kind

    @property
    def shape(self) -> tuple:
        return self._a.shape

    @property
    def strides(self) -> tuple:
        """Element strides (not bytes)."""
        return tuple(s // self._a.itemsize for s in self._a.strides)

    @property
    def ndim(self) -> int:
        return self._a.ndim

    @property
    def size(self) -> int:
        return self._a.size

    @property
    def data(self) -> np.ndarray:
        """The elements in logical (row-major) order as a flat buffer."""
        return np.ascontiguousarray(self._a).reshape(-1)

    def array(self) -> np.ndarray:
        return self._a

    def contiguous(self) -> "Tensor":
        return Tensor(np.ascontiguousarray(self._a), self.kind)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor(np.ascontiguousarray(self._a).reshape(shape), self.kind)

    def transpose2d(self) -> "Tensor":
        if self.ndim != 2:
            raise ValueError("transpose2d needs a 2-D tensor")
        return Tensor(self._a.T, self.kind)

    def __getitem__(self, idx) -> "Tensor":
        return Tensor(np.asarray(self._a[idx]), self.kind)

    def __len__(self) -> int:
        return self.shape[0]

    def to_float64(self) -> np.ndarray:
        return a_to_float64(self._a, self.kind)

    def bits(self) -> np.ndarray:
        if not is_posit(self.kind):
            raise TypeError("bit patterns only exist for posit tensors")
        return self._a

    def _other(self, other):
        if isinstance(other, Tensor):
            if other.kind != self.kind:
                raise TypeError(f"kind mismatch: {kind_str(self.kind)} vs {kind_str(other.kind)}")
            return other._a
        return a_const(other, self.kind)

    def _op(self, op: int, other) -> "Tensor":
        return Tensor(a_binary(op, self._a, self._other(other), self.kind), self.kind)

    def __add__(self, other):
        return self._op(K.ADD, other)

    def __sub__(self, other):
        return self._op(K.SUB, other)

    def __mul__(self, other):
        return self._op(K.MUL, other)

    def __truediv__(self, other):
        return self._op(K.DIV, other)

    def __neg__(self):
        return Tensor(a_neg(self._a, self.kind), self.kind)

    def map(self, name: str) -> "Tensor":
        return Tensor(a_unary(name, self._a, self.kind), self.kind)

    def bit_equal(self, other: "Tensor") -> bool:
        return self.kind == other.kind and a_equal_bits(np.ascontiguousarray(self._a),
                                                        np.ascontiguousarray(other._a))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, kind={kind_str(self.kind)})"


def zeros(shape: Sequence[int], kind: Kind) -> Tensor:
    return Tensor(a_zeros(tuple(shape), kind), kind)


def full(shape: Sequence[int], value, kind: Kind) -> Tensor:
    return Tensor(a_full(tuple(shape), value, kind), kind)


def from_values(values, kind: Kind) -> Tensor:
    """Round float64 data into ``kind`` (the data-ingestion boundary)."""
    return Tensor(a_from_float64(np.asarray(values, dtype=np.float64), kind), kind)


def from_bits(bits, cfg: PositConfig) -> Tensor:
    return Tensor(np.asarray(bits, dtype=np.uint64) & np.uint64(cfg.mask), cfg)


def convert_tensor(t: Tensor, target: Kind) -> Tensor:
    return Tensor(a_convert(t.array(), t.kind, target), target)


def _check2(a: Tensor, b: Tensor) -> None:
    if a.kind != b.kind:
        raise TypeError(f"kind mismatch: {kind_str(a.kind)} vs {kind_str(b.kind)}")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")


def matmul(a: Tensor, b: Tensor, use_quire: bool = False) -> Tensor:
    _check2(a, b)
    bt = np.ascontiguousarray(b.array().T)
    return Tensor(a_matmul_nt(a.array(), bt, a.kind, quire=use_quire), a.kind)


def par_matmul(a: Tensor, b: Tensor, workers: int, use_quire: bool = False) -> Tensor:
    """:func:`matmul` with the left operand split by rows across ``workers`` threads."""
    _check2(a, b)
    bt = np.ascontiguousarray(b.array().T)
    return Tensor(a_matmul_nt(a.array(), bt, a.kind, quire=use_quire, workers=workers), a.kind)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, use_quire: bool = False, workers: int = 1) -> Tensor:
    if x.kind != weight.kind or (bias is not None and bias.kind != x.kind):
        raise TypeError("conv2d operands must share one kind")
    b = None if bias is None else bias.array()
    out = a_conv2d(x.array(), weight.array(), b, x.kind, stride=stride, padding=padding,
                   quire=use_quire, workers=workers)
    return Tensor(out, x.kind)


def pool2d_max(x: Tensor, window: int, stride: int | None = None):
    out, arg = a_maxpool(x.array(), x.kind, window, stride)
    return Tensor(out, x.kind), arg


def pool2d_avg(x: Tensor, window: int, stride: int | None = None, use_quire: bool = False) -> Tensor:
    return Tensor(a_avgpool(x.array(), x.kind, window, stride, quire=use_quire), x.kind)
