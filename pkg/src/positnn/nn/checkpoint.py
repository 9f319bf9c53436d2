"""Bit-exact model checkpoints.

Layout (little-endian): the magic ``b"PNN1"`` followed by one record per
tensor until end of file::

    u32 name length, name bytes (utf-8)
    u8 nbits, u8 es            (es = 255 marks an IEEE float of nbits bits)
    u8 rank, rank x u32 extents
    elements, ceil(nbits/8) bytes each

Parameters are stored as their master copies, followed by buffers such as
batch-norm running statistics.
"""
from __future__ import annotations

import io
import os
import struct

import numpy as np

from ..posit import PositConfig
from ..tensor import FLOAT32, FLOAT64, Kind, a_convert, is_posit, kind_str, storage_dtype
from .models import Model

MAGIC = b"PNN1"
FLOAT_ES = 255


class CheckpointError(ValueError):
    pass


def _kind_code(kind: Kind) -> tuple[int, int]:
    if is_posit(kind):
        return kind.nbits, kind.es
    return kind.dtype.itemsize * 8, FLOAT_ES


def _kind_from_code(nbits: int, es: int) -> Kind:
    if es == FLOAT_ES:
        if nbits == 32:
            return FLOAT32
        if nbits == 64:
            return FLOAT64
        raise CheckpointError(f"unsupported float width {nbits}")
    return PositConfig(nbits, es)


def _pack(values: np.ndarray, kind: Kind) -> bytes:
    if not is_posit(kind):
        return np.ascontiguousarray(values, dtype=kind.dtype.newbyteorder("<")).tobytes()
    width = (kind.nbits + 7) // 8
    le = np.ascontiguousarray(values, dtype="<u8").view(np.uint8).reshape(-1, 8)
    return le[:, :width].tobytes()


def _unpack(raw: bytes, count: int, kind: Kind) -> np.ndarray:
    if not is_posit(kind):
        return np.frombuffer(raw, dtype=kind.dtype.newbyteorder("<"), count=count).astype(kind.dtype)
    width = (kind.nbits + 7) // 8
    buf = np.zeros((count, 8), dtype=np.uint8)
    buf[:, :width] = np.frombuffer(raw, dtype=np.uint8).reshape(count, width)
    out = buf.view("<u8").reshape(count).astype(np.uint64)
    if np.any(out > np.uint64(kind.mask)):
        raise CheckpointError("pattern wider than its format")
    return out


def write_records(f, records) -> None:
    f.write(MAGIC)
    for name, kind, values in records:
        nb = name.encode()
        nbits, es = _kind_code(kind)
        f.write(struct.pack("<I", len(nb)) + nb)
        f.write(struct.pack("<BBB", nbits, es, values.ndim))
        f.write(struct.pack(f"<{values.ndim}I", *values.shape))
        f.write(_pack(values, kind))


def read_records(f) -> list:
    data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointError("not a PNN1 checkpoint (bad magic)")
    pos, out = 4, []

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (ln,) = struct.unpack("<I", take(4))
        name = take(ln).decode()
        nbits, es, rank = struct.unpack("<BBB", take(3))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        kind = _kind_from_code(nbits, es)
        count = int(np.prod(shape)) if shape else 1
        width = (nbits + 7) // 8
        values = _unpack(take(count * width), count, kind).reshape(shape)
        out.append((name, kind, values))
    return out


def model_records(model: Model) -> list:
    recs = [(name, p.prec.optimizer, p.master) for name, p in model.named_params()]
    recs += [(name, model.prec.optimizer, b) for name, b in model.named_buffers()]
    return recs


def dumps(model: Model) -> bytes:
    buf = io.BytesIO()
    write_records(buf, model_records(model))
    return buf.getvalue()


def save_model(model: Model, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(dumps(model))


def load_model(model: Model, path: str | os.PathLike, *, convert: bool = False) -> Model:
    """Fill ``model`` (already built with the intended precisions) from ``path``.

    With ``convert=True`` tensors stored in another format are rounded into the
    model's format instead of being rejected.
    """
    with open(path, "rb") as f:
        records = read_records(f)
    expected = {name: (kind, values.shape) for name, kind, values in model_records(model)}
    got = {name for name, _, _ in records}
    if got != set(expected):
        missing, extra = sorted(set(expected) - got), sorted(got - set(expected))
        raise CheckpointError(f"tensor names differ (missing {missing}, unexpected {extra})")
    params = dict(model.named_params())
    for name, kind, values in records:
        want_kind, want_shape = expected[name]
        if kind != want_kind and convert:
            values, kind = a_convert(values, kind, want_kind), want_kind
        if kind != want_kind:
            raise CheckpointError(f"{name}: checkpoint stores {kind_str(kind)}, model expects "
                                  f"{kind_str(want_kind)}")
        if values.shape != want_shape:
            raise CheckpointError(f"{name}: shape {values.shape} != {want_shape}")
        values = np.ascontiguousarray(values, dtype=storage_dtype(kind))
        if name in params:
            params[name].set_master(values)
        else:
            model.set_buffer(name, values)
    return model
