"""Layers with hand-written backward passes.

Forward arithmetic runs in the forward format, backward in the backward
format; weight gradients are accumulated from backward-format operands and
rounded into the gradient format.  Arrays are numpy buffers of the stage kind
(posit patterns or floats).
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .. import tensor as T
from ..tensor import a_add, a_const, a_convert, a_mul, a_sub, a_unary
from .precision import MixedParam, StagePrecisions


class Layer:
    """Base class: ``forward`` caches what ``backward`` needs."""

    def __init__(self):
        self.training = True
        self.prec: StagePrecisions | None = None
        self.workers = 1
        self._cached = False

    def bind(self, prec: StagePrecisions, workers: int = 1) -> None:
        self.prec = prec
        self.workers = workers

    def params(self) -> list[tuple[str, MixedParam]]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        """Non-trainable state stored in the optimizer format (saved with the model)."""
        return []

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self) -> None:
        if not self._cached:
            raise RuntimeError(f"{type(self).__name__}.backward called without a training forward")

    # format helpers
    @property
    def kf(self):
        return self.prec.forward

    @property
    def kb(self):
        return self.prec.backward

    def to_backward(self, x: np.ndarray) -> np.ndarray:
        return a_convert(x, self.prec.forward, self.prec.backward) if self.kf != self.kb else x

    def __repr__(self) -> str:
        return type(self).__name__ + "()"


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features, self.out_features, self.has_bias = in_features, out_features, bias
        self.weight: MixedParam | None = None
        self.bias: MixedParam | None = None

    def init_params(self, rng: np.random.Generator, prefix: str) -> None:
        w = _fan_in_uniform(rng, (self.out_features, self.in_features), self.in_features)
        self.weight = MixedParam.from_float64(prefix + "weight", w, self.prec)
        if self.has_bias:
            b = _fan_in_uniform(rng, (self.out_features,), self.in_features)
            self.bias = MixedParam.from_float64(prefix + "bias", b, self.prec)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"Linear({self.in_features}->{self.out_features}) got {x.shape}")
        self.x = x
        self._cached = self.training
        b = None if self.bias is None else self.bias.copy("forward")
        return T.a_matmul_nt(x, self.weight.copy("forward"), self.kf,
                             quire=self.prec.quire("forward"), bias=b, workers=self.workers)

    def backward(self, dy):
        self._need_cache()
        p = self.prec
        dy_t = np.ascontiguousarray(dy.T)
        x_t = np.ascontiguousarray(self.to_backward(self.x).T)
        self.weight.grad = T.a_matmul_nt(dy_t, x_t, p.backward, quire=p.quire("gradient"),
                                         out_kind=p.gradient, workers=self.workers)
        if self.bias is not None:
            self.bias.grad = T.a_sum_rows(dy_t, p.backward, quire=p.quire("gradient"),
                                          out_kind=p.gradient, workers=self.workers)
        w_t = np.ascontiguousarray(self.weight.copy("backward").T)
        return T.a_matmul_nt(dy, w_t, p.backward, quire=p.quire("backward"), workers=self.workers)

    def __repr__(self):
        return f"Linear({self.in_features}, {self.out_features})"


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding: int = 0, bias: bool = True):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        self.has_bias = bias
        self.weight: MixedParam | None = None
        self.bias: MixedParam | None = None
        self.need_input_grad = True

    def init_params(self, rng, prefix):
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        w = _fan_in_uniform(rng, (self.out_channels, self.in_channels, k, k), fan_in)
        self.weight = MixedParam.from_float64(prefix + "weight", w, self.prec)
        if self.has_bias:
            b = _fan_in_uniform(rng, (self.out_channels,), fan_in)
            self.bias = MixedParam.from_float64(prefix + "bias", b, self.prec)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"Conv2d expects (N, {self.in_channels}, H, W), got {x.shape}")
        self.x = x
        self._cached = self.training
        b = None if self.bias is None else self.bias.copy("forward")
        return T.a_conv2d(x, self.weight.copy("forward"), b, self.kf, stride=self.stride,
                          padding=self.padding, quire=self.prec.quire("forward"),
                          workers=self.workers)

    def backward(self, dy):
        self._need_cache()
        p = self.prec
        dx, dw, db = T.a_conv2d_backward(
            dy, self.to_backward(self.x), self.weight.copy("backward"), p.backward,
            stride=self.stride, padding=self.padding, quire=p.quire("gradient"),
            grad_kind=p.gradient, need_dx=self.need_input_grad, dx_quire=p.quire("backward"),
            workers=self.workers)
        self.weight.grad = dw
        if self.bias is not None:
            self.bias.grad = db
        return dx

    def __repr__(self):
        return (f"Conv2d({self.in_channels}, {self.out_channels}, k={self.kernel_size}, "
                f"s={self.stride}, p={self.padding})")


class MaxPool2d(Layer):
    def __init__(self, window: int = 2, stride: int | None = None):
        super().__init__()
        self.window, self.stride = window, stride or window

    def forward(self, x):
        out, self.arg = T.a_maxpool(x, self.kf, self.window, self.stride)
        self.in_shape = x.shape
        self._cached = self.training
        return out

    def backward(self, dy):
        self._need_cache()
        return T.a_maxpool_backward(dy, self.arg, self.in_shape, self.kb, self.window, self.stride)

    def __repr__(self):
        return f"MaxPool2d({self.window}, s={self.stride})"


class AvgPool2d(Layer):
    def __init__(self, window: int = 2, stride: int | None = None):
        super().__init__()
        self.window, self.stride = window, stride or window

    def forward(self, x):
        self.in_shape = x.shape
        self._cached = self.training
        return T.a_avgpool(x, self.kf, self.window, self.stride, quire=self.prec.quire("forward"),
                           workers=self.workers)

    def backward(self, dy):
        self._need_cache()
        return T.a_avgpool_backward(dy, self.in_shape, self.kb, self.window, self.stride)

    def __repr__(self):
        return f"AvgPool2d({self.window}, s={self.stride})"


class ReLU(Layer):
    def forward(self, x):
        self.mask = T.a_positive(x, self.kf)
        self._cached = self.training
        return np.where(self.mask, x, a_const(0, self.kf))

    def backward(self, dy):
        self._need_cache()
        return np.where(self.mask, dy, a_const(0, self.kb))


class Sigmoid(Layer):
    def forward(self, x):
        self.y = a_unary("sigmoid", x, self.kf)
        self._cached = self.training
        return self.y

    def backward(self, dy):
        self._need_cache()
        kb = self.kb
        y = self.to_backward(self.y)
        one_minus = a_sub(a_const(1, kb), y, kb)
        return a_mul(dy, a_mul(y, one_minus, kb), kb)


class Tanh(Layer):
    def forward(self, x):
        self.y = a_unary("tanh", x, self.kf)
        self._cached = self.training
        return self.y

    def backward(self, dy):
        self._need_cache()
        kb = self.kb
        y = self.to_backward(self.y)
        return a_mul(dy, a_sub(a_const(1, kb), a_mul(y, y, kb), kb), kb)


class Dropout(Layer):
    """Inverted dropout with a seeded mask stream."""

    def __init__(self, p: float = 0.5, seed: int = 0):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self.rng = np.random.default_rng(seed)
        self._scale = Fraction(1) / (1 - Fraction(p))

    def forward(self, x):
        if not self.training or self.p == 0.0:
            self.mask = None
            return x
        self.mask = self.rng.random(x.shape) >= self.p
        self._cached = True
        scaled = a_mul(x, a_const(self._scale, self.kf), self.kf)
        return np.where(self.mask, scaled, a_const(0, self.kf))

    def backward(self, dy):
        self._need_cache()
        if self.mask is None:
            return dy
        scaled = a_mul(dy, a_const(self._scale, self.kb), self.kb)
        return np.where(self.mask, scaled, a_const(0, self.kb))

    def __repr__(self):
        return f"Dropout({self.p})"


class BatchNorm(Layer):
    """Per-channel batch normalization for (N, C) or (N, C, H, W) inputs.

    Running statistics live in the optimizer format and are saved with the model.
    """

    EPS = Fraction(1, 1024)

    def __init__(self, channels: int, momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.momentum = Fraction(momentum).limit_denominator(1 << 20)
        self.gamma: MixedParam | None = None
        self.beta: MixedParam | None = None

    def init_params(self, rng, prefix):
        self.gamma = MixedParam.from_float64(prefix + "gamma", np.ones(self.channels), self.prec)
        self.beta = MixedParam.from_float64(prefix + "beta", np.zeros(self.channels), self.prec)
        ko = self.prec.optimizer
        self.running_mean = T.a_full((self.channels,), 0, ko)
        self.running_var = T.a_full((self.channels,), 1, ko)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_buffer(self, name, value):
        if name not in ("running_mean", "running_var"):
            raise KeyError(name)
        setattr(self, name, np.ascontiguousarray(value))

    @staticmethod
    def _to_rows(x):
        """(N, C, ...) -> (C, N*...) and the inverse."""
        if x.ndim == 2:
            return np.ascontiguousarray(x.T)
        n, c = x.shape[:2]
        return np.ascontiguousarray(np.moveaxis(x, 1, 0)).reshape(c, -1)

    @staticmethod
    def _from_rows(r, shape):
        if len(shape) == 2:
            return np.ascontiguousarray(r.T)
        c = shape[1]
        return np.ascontiguousarray(np.moveaxis(r.reshape((c, shape[0]) + shape[2:]), 0, 1))

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"BatchNorm({self.channels}) got {x.shape}")
        k, p = self.kf, self.prec
        rows = self._to_rows(x)
        count = rows.shape[1]
        inv = a_const(Fraction(1, count), k)
        eps = a_const(self.EPS, k)
        ko = p.optimizer
        if self.training:
            mean = a_mul(T.a_sum_rows(rows, k, quire=p.quire("forward"), workers=self.workers),
                         inv, k)
            d = a_sub(rows, mean[:, None], k)
            var = a_mul(T.a_sum_rows(a_mul(d, d, k), k, quire=p.quire("forward"),
                                     workers=self.workers), inv, k)
            rstd = a_unary("rsqrt", a_add(var, eps, k), k)
            xhat = a_mul(d, rstd[:, None], k)
            mom = a_const(self.momentum, ko)
            keep = a_const(1 - self.momentum, ko)
            unbiased = a_const(Fraction(count, max(count - 1, 1)), ko)
            m_o = a_convert(mean, k, ko)
            v_o = a_mul(a_convert(var, k, ko), unbiased, ko)
            self.running_mean = a_add(a_mul(self.running_mean, keep, ko), a_mul(m_o, mom, ko), ko)
            self.running_var = a_add(a_mul(self.running_var, keep, ko), a_mul(v_o, mom, ko), ko)
            self.xhat, self.rstd, self.in_shape = xhat, rstd, x.shape
            self._cached = True
        else:
            rm, rv = a_convert(self.running_mean, ko, k), a_convert(self.running_var, ko, k)
            rstd = a_unary("rsqrt", a_add(rv, eps, k), k)
            xhat = a_mul(a_sub(rows, rm[:, None], k), rstd[:, None], k)
        y = a_add(a_mul(xhat, self.gamma.copy("forward")[:, None], k),
                  self.beta.copy("forward")[:, None], k)
        return self._from_rows(y, x.shape)

    def backward(self, dy):
        self._need_cache()
        p, k = self.prec, self.kb
        dyr = self._to_rows(dy)
        count = dyr.shape[1]
        xhat = self.to_backward(self.xhat)
        rstd = self.to_backward(self.rstd)
        qg, qb = p.quire("gradient"), p.quire("backward")
        self.beta.grad = T.a_sum_rows(dyr, k, quire=qg, out_kind=p.gradient, workers=self.workers)
        self.gamma.grad = T.a_sum_rows(a_mul(dyr, xhat, k), k, quire=qg, out_kind=p.gradient,
                                       workers=self.workers)
        dxhat = a_mul(dyr, self.gamma.copy("backward")[:, None], k)
        inv = a_const(Fraction(1, count), k)
        s1 = a_mul(T.a_sum_rows(dxhat, k, quire=qb, workers=self.workers), inv, k)
        s2 = a_mul(T.a_sum_rows(a_mul(dxhat, xhat, k), k, quire=qb, workers=self.workers), inv, k)
        inner = a_sub(a_sub(dxhat, s1[:, None], k), a_mul(xhat, s2[:, None], k), k)
        dx = a_mul(inner, rstd[:, None], k)
        return self._from_rows(dx, self.in_shape)

    def __repr__(self):
        return f"BatchNorm({self.channels})"


class Flatten(Layer):
    def forward(self, x):
        self.in_shape = x.shape
        self._cached = self.training
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        self._need_cache()
        return dy.reshape(self.in_shape)
