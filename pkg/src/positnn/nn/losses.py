"""Loss functions; all internal arithmetic runs in the loss format."""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .. import tensor as T
from ..tensor import a_const, a_convert, a_div, a_mul, a_sub, a_unary
from .precision import StagePrecisions


class CrossEntropy:
    """Softmax cross-entropy fused with its gradient ``(softmax - onehot) / B``."""

    def __init__(self, prec: StagePrecisions, workers: int = 1):
        self.prec = prec
        self.workers = workers
        self._cache = None

    def forward(self, logits: np.ndarray, targets) -> np.ndarray:
        """Mean loss as a 0-d array in the loss format."""
        p = self.prec
        k, q = p.loss, p.quire("loss")
        targets = np.asarray(targets, dtype=np.int64)
        b, c = logits.shape
        if targets.shape != (b,) or targets.min(initial=0) < 0 or targets.max(initial=0) >= c:
            raise ValueError("targets must be class indices, one per row")
        z = a_convert(logits, p.forward, k) if p.forward != k else logits
        key = T.a_key(z, k)
        zmax = np.take_along_axis(z, np.argmax(key, axis=1)[:, None], axis=1)
        shifted = a_sub(z, zmax, k)
        e = a_unary("exp", shifted, k)
        s = T.a_sum_rows(e, k, quire=q, workers=self.workers)
        lse = a_unary("log", s, k)
        picked = shifted[np.arange(b), targets]
        per = a_sub(lse, picked, k)
        total = T.a_sum_rows(per[None, :], k, quire=q)[0]
        self._cache = (e, s, targets)
        return np.asarray(a_mul(total, a_const(Fraction(1, b), k), k))

    def backward(self, grad_scale_log2: int = 0) -> np.ndarray:
        """Gradient w.r.t. the logits, scaled by ``2**grad_scale_log2``, in the backward format."""
        if self._cache is None:
            raise RuntimeError("CrossEntropy.backward called before forward")
        p = self.prec
        k = p.loss
        e, s, targets = self._cache
        b = e.shape[0]
        prob = a_div(e, s[:, None], k)
        rows = np.arange(b)
        prob[rows, targets] = a_sub(prob[rows, targets], a_const(1, k), k)
        g = a_mul(prob, a_const(Fraction(2) ** grad_scale_log2 / b, k), k)
        return a_convert(g, k, p.backward) if k != p.backward else g


class MSELoss:
    """Mean squared error over all elements; gradient ``2 (y - t) / N``."""

    def __init__(self, prec: StagePrecisions, workers: int = 1):
        self.prec = prec
        self.workers = workers
        self._cache = None

    def forward(self, y: np.ndarray, target: np.ndarray) -> np.ndarray:
        """``target`` must already be in the loss format (same shape as ``y``)."""
        p = self.prec
        k = p.loss
        if target.shape != y.shape:
            raise ValueError(f"target shape {target.shape} != prediction {y.shape}")
        yk = a_convert(y, p.forward, k) if p.forward != k else y
        d = a_sub(yk, target, k)
        sq = a_mul(d, d, k).reshape(1, -1)
        n = sq.shape[1]
        total = T.a_sum_rows(sq, k, quire=p.quire("loss"))[0]
        self._cache = (d, n)
        return np.asarray(a_mul(total, a_const(Fraction(1, n), k), k))

    def backward(self, grad_scale_log2: int = 0) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("MSELoss.backward called before forward")
        p = self.prec
        d, n = self._cache
        g = a_mul(d, a_const(Fraction(2) ** (grad_scale_log2 + 1) / n, p.loss), p.loss)
        return a_convert(g, p.loss, p.backward) if p.loss != p.backward else g
