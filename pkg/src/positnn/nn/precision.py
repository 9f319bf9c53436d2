"""Per-stage precisions and weights kept as synchronized multi-format copies."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..tensor import Kind, Tensor, a_convert, a_from_float64, is_posit, kind_str, parse_kind

STAGES = ("forward", "backward", "gradient", "optimizer", "loss")


@dataclass(frozen=True)
class StagePrecisions:
    """The five formats of the training loop plus a quire switch per stage.

    ``forward`` (p1) covers layer outputs, ``loss`` (p5) the loss and its
    gradient, ``backward`` (p2) the propagated errors, ``gradient`` (p3) the
    weight gradients and ``optimizer`` (p4) the master weights and update.
    Quire switches only matter for posit kinds.
    """

    forward: Kind
    backward: Kind
    gradient: Kind
    optimizer: Kind
    loss: Kind
    quire_forward: bool = False
    quire_backward: bool = False
    quire_gradient: bool = False
    quire_optimizer: bool = False
    quire_loss: bool = False

    @classmethod
    def uniform(cls, kind: Kind, quire: bool = False) -> "StagePrecisions":
        return cls(kind, kind, kind, kind, kind, quire, quire, quire, False, quire)

    @classmethod
    def build(cls, forward, backward=None, gradient=None, optimizer=None, loss=None,
              quire: bool = False, quire_optimizer: bool = False) -> "StagePrecisions":
        """Unset stages default to ``forward``; ``gradient`` defaults to ``backward``."""
        conv = lambda k: parse_kind(k) if isinstance(k, str) else k  # noqa: E731
        f = conv(forward)
        b = conv(backward) if backward is not None else f
        g = conv(gradient) if gradient is not None else b
        o = conv(optimizer) if optimizer is not None else f
        lo = conv(loss) if loss is not None else f
        return cls(f, b, g, o, lo, quire, quire, quire, quire_optimizer, quire)

    def with_quire(self, on: bool) -> "StagePrecisions":
        return replace(self, quire_forward=on, quire_backward=on, quire_gradient=on, quire_loss=on)

    def kinds(self) -> dict:
        return {s: getattr(self, s) for s in STAGES}

    def quire(self, stage: str) -> bool:
        return getattr(self, "quire_" + stage) and is_posit(getattr(self, stage))

    @property
    def all_float(self) -> bool:
        return not any(is_posit(k) for k in self.kinds().values())

    def describe(self) -> str:
        parts = []
        for s in STAGES:
            q = "+q" if getattr(self, "quire_" + s) else ""
            parts.append(f"{s}={kind_str(getattr(self, s))}{q}")
        return " ".join(parts)


class MixedParam:
    """A trainable tensor: master copy in the optimizer format plus one copy per
    other stage format.  Copies are refreshed from the master after every change,
    so ``copy(k) == convert(master, k)`` always holds outside an update."""

    def __init__(self, name: str, master: np.ndarray, prec: StagePrecisions):
        self.name = name
        self.prec = prec
        self.shape = master.shape
        self._master = np.ascontiguousarray(master)
        self._copies: dict = {}
        self.grad: np.ndarray | None = None
        self.refresh()

    @classmethod
    def from_float64(cls, name: str, values: np.ndarray, prec: StagePrecisions) -> "MixedParam":
        return cls(name, a_from_float64(values, prec.optimizer), prec)

    @property
    def master(self) -> np.ndarray:
        return self._master

    def set_master(self, values: np.ndarray) -> None:
        values = np.ascontiguousarray(values)
        if values.shape != self.shape:
            raise ValueError(f"{self.name}: shape {values.shape} != {self.shape}")
        self._master = values
        self.refresh()

    def refresh(self) -> None:
        opt = self.prec.optimizer
        self._copies = {opt: self._master}
        for stage in ("forward", "backward"):
            kind = getattr(self.prec, stage)
            if kind not in self._copies:
                self._copies[kind] = a_convert(self._master, opt, kind)

    def copy(self, stage: str) -> np.ndarray:
        return self._copies[getattr(self.prec, stage)]

    def tensor(self, stage: str = "optimizer") -> Tensor:
        return Tensor(self.copy(stage), getattr(self.prec, stage))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def __repr__(self) -> str:
        return f"MixedParam({self.name}, shape={self.shape})"
