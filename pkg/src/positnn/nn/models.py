"""Sequential model container and the LeNet-5 / CifarNet builders."""
from __future__ import annotations

import numpy as np

from ..tensor import Tensor
from .layers import (AvgPool2d, BatchNorm, Conv2d, Dropout, Flatten, Layer, Linear, MaxPool2d,
                     ReLU, Sigmoid, Tanh)
from .precision import MixedParam, StagePrecisions

ACTIVATIONS = {"tanh": Tanh, "relu": ReLU, "sigmoid": Sigmoid}
POOLS = {"max": MaxPool2d, "avg": AvgPool2d}


class Model:
    """Layers applied in order; ``backward`` runs them in reverse."""

    def __init__(self, layers: list[Layer], prec: StagePrecisions, *, seed: int = 0,
                 workers: int = 1, name: str = "model"):
        self.layers = layers
        self.prec = prec
        self.name = name
        rng = np.random.default_rng(seed)
        for i, layer in enumerate(layers):
            layer.bind(prec, workers)
            if hasattr(layer, "init_params"):
                layer.init_params(rng, f"{i}.")
        # the first layer never needs an input gradient
        if layers and isinstance(layers[0], Conv2d):
            layers[0].need_input_grad = False

    def set_workers(self, workers: int) -> None:
        for layer in self.layers:
            layer.workers = workers

    def train(self, mode: bool = True) -> "Model":
        for layer in self.layers:
            layer.training = mode
        return self

    def eval(self) -> "Model":
        return self.train(False)

    def forward(self, x):
        """Accepts a :class:`Tensor` or an array in the forward format."""
        a = x.array() if isinstance(x, Tensor) else x
        for layer in self.layers:
            a = layer.forward(a)
        return Tensor(a, self.prec.forward) if isinstance(x, Tensor) else a

    __call__ = forward

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
            if dy is None:
                break
        return dy

    def named_params(self) -> list[tuple[str, MixedParam]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                out.append((f"{i}.{name}", p))
        return out

    def params(self) -> list[MixedParam]:
        return [p for _, p in self.named_params()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers():
                out.append((f"{i}.{name}", b))
        return out

    def set_buffer(self, qualified: str, value: np.ndarray) -> None:
        idx, name = qualified.split(".", 1)
        self.layers[int(idx)].set_buffer(name, value)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params())

    def __repr__(self) -> str:
        body = ", ".join(repr(layer) for layer in self.layers)
        return f"{self.name}[{body}]"


def build_lenet5(prec: StagePrecisions, *, activation: str = "tanh", pool: str = "max",
                 seed: int = 0, workers: int = 1, in_channels: int = 1) -> Model:
    """LeNet-5 for 28x28 inputs: the first convolution pads by 2 so the classic
    32x32 geometry (and 16*5*5 flattened features) is kept."""
    act, pl = ACTIVATIONS[activation], POOLS[pool]
    layers = [
        Conv2d(in_channels, 6, 5, padding=2), act(), pl(2),
        Conv2d(6, 16, 5), act(), pl(2),
        Flatten(),
        Linear(16 * 5 * 5, 120), act(),
        Linear(120, 84), act(),
        Linear(84, 10),
    ]
    return Model(layers, prec, seed=seed, workers=workers, name="lenet5")


def build_cifarnet(prec: StagePrecisions, *, seed: int = 0, workers: int = 1,
                   batchnorm: bool = False, dropout: float = 0.0) -> Model:
    """CifarNet for 3x32x32 inputs (the "cifar10-quick" shape)."""
    layers: list[Layer] = [Conv2d(3, 32, 5, padding=2), MaxPool2d(2), ReLU()]
    if batchnorm:
        layers.append(BatchNorm(32))
    layers += [Conv2d(32, 32, 5, padding=2), ReLU(), AvgPool2d(2),
               Conv2d(32, 64, 5, padding=2), ReLU(), AvgPool2d(2),
               Flatten(), Linear(64 * 4 * 4, 64)]
    if dropout:
        layers.append(Dropout(dropout, seed=seed))
    layers.append(Linear(64, 10))
    return Model(layers, prec, seed=seed, workers=workers, name="cifarnet")
