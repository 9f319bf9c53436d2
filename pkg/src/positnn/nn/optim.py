"""SGD with momentum in the optimizer format, and power-of-two gradient scaling."""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from ..tensor import Kind, a_add, a_const, a_convert, a_mul, a_sub, a_zeros
from .precision import MixedParam


def scale_gradients(grads: np.ndarray, log2_factor: int, kind: Kind) -> np.ndarray:
    """Multiply by ``2**log2_factor``: only the regime/exponent move unless the
    result saturates at maxpos or minpos."""
    if log2_factor == 0:
        return np.array(grads, copy=True)
    return a_mul(grads, a_const(Fraction(2) ** log2_factor, kind), kind)


class SGD:
    """``v = momentum*v + g / 2**s`` then ``w = w - lr*v``, all in the optimizer format.

    Stage copies of every parameter are refreshed after the update.
    """

    def __init__(self, params: list[MixedParam], lr: float, momentum: float = 0.0,
                 grad_scale_log2: int = 0):
        if not params:
            raise ValueError("no parameters to optimize")
        self.params = params
        self.set_lr(lr)
        self.momentum = momentum
        self.grad_scale_log2 = grad_scale_log2
        self._velocity: dict[str, np.ndarray] = {}

    def set_lr(self, lr: float) -> None:
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr

    @staticmethod
    def _exact(x: float) -> Fraction:
        # decimal hyperparameters (0.01, 0.9) are taken at their decimal value
        return Fraction(repr(x)) if isinstance(x, float) else Fraction(x)

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            ko, kg = p.prec.optimizer, p.prec.gradient
            g = a_convert(p.grad, kg, ko) if kg != ko else p.grad
            if self.grad_scale_log2:
                g = scale_gradients(g, -self.grad_scale_log2, ko)
            if self.momentum:
                v = self._velocity.get(p.name)
                if v is None:
                    v = g
                else:
                    v = a_add(a_mul(v, a_const(self._exact(self.momentum), ko), ko), g, ko)
                self._velocity[p.name] = v
                g = v
            upd = a_mul(g, a_const(self._exact(self.lr), ko), ko)
            p.set_master(a_sub(p.master, upd, ko))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def velocity(self, name: str, kind: Kind, shape) -> np.ndarray:
        return self._velocity.get(name, a_zeros(shape, kind))
