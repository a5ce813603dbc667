"""Layer objects that compose into networks.

Parameters are drawn from a scaled uniform distribution
(+-sqrt(6 / fan_in)) using the generator handed to the constructor, so a
network builder seeded once is reproducible bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Layer:
    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def params(self) -> list[Tensor]:
        return []

    def __repr__(self):
        return type(self).__name__


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, pad: int = 0, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        k = kernel_size
        fan_in = in_channels * k * k
        self.weight = Tensor(_uniform_init(rng, (out_channels, in_channels, k, k), fan_in),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.pad = pad

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)

    def params(self):
        return [self.weight, self.bias]

    def __repr__(self):
        co, ci, k, _ = self.weight.shape
        return f"Conv2d({ci}->{co}, k={k}, stride={self.stride}, pad={self.pad})"


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(_uniform_init(rng, (out_features, in_features), in_features),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)

    def forward(self, x):
        return T.dense(x, self.weight, self.bias)

    def params(self):
        return [self.weight, self.bias]

    def __repr__(self):
        m, n = self.weight.shape
        return f"Dense({n}->{m})"


class ReLU(Layer):
    def forward(self, x):
        return T.relu(x)


class Sigmoid(Layer):
    def forward(self, x):
        return T.sigmoid(x)


class MaxPool2(Layer):
    def forward(self, x):
        return T.maxpool2(x)


class Upsample2(Layer):
    def forward(self, x):
        return T.upsample2(x)


class Flatten(Layer):
    def forward(self, x):
        if x.data.ndim == 4:
            return T.reshape(x, (x.shape[0], -1))
        return T.reshape(x, (-1,))


class Reshape(Layer):
    """Reshape the non-batch part of the input to a fixed target shape."""

    def __init__(self, target: tuple[int, ...]):
        self.target = tuple(target)

    def forward(self, x):
        if x.data.ndim == 2:
            return T.reshape(x, (x.shape[0], *self.target))
        return T.reshape(x, self.target)

    def __repr__(self):
        return f"Reshape{self.target}"


class Network:
    """An ordered layer list with an architecture tag and a build seed."""

    def __init__(self, layers: list[Layer], arch_id: str, seed: int = 0):
        self.layers = list(layers)
        self.arch_id = arch_id
        self.seed = seed

    def forward(self, x) -> Tensor:
        out = T.as_tensor(x)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_entries(self) -> list[tuple[str, np.ndarray]]:
        """Stable (name, array) pairs for checkpointing."""
        entries = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2d) or isinstance(layer, Dense):
                entries.append((f"layers.{i}.weight", layer.weight.data))
                entries.append((f"layers.{i}.bias", layer.bias.data))
        return entries

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def __repr__(self):
        inner = ", ".join(repr(l) for l in self.layers)
        return f"Network[{self.arch_id}]({inner})"
