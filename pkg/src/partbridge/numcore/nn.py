"""Small trainable building blocks: linear layers, 3x3 convs, MLPs.

Initialization is scaled-normal fan-in (std = 1/sqrt(fan_in)) from a
caller-supplied numpy Generator so whole-model init is reproducible from
one seed.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


class Module:
    """Owns an ordered list of named parameters."""

    def parameters(self) -> list[tuple[str, T.Tensor]]:
        raise NotImplementedError

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.parameters()]

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise T.ShapeError(f"load_state({name})", src.shape, p.data.shape)
            p.data = src.astype(p.data.dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "linear"):
        self.name = name
        std = 1.0 / np.sqrt(n_in)
        self.w = T.Tensor(rng.normal(0.0, std, size=(n_in, n_out)), requires_grad=True, dtype=dtype)
        self.b = T.Tensor(np.zeros(n_out), requires_grad=True, dtype=dtype)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.add(T.matmul(x, self.w), self.b)

    def parameters(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class Conv3x3(Module):
    """3x3 same-size convolution with zero padding (channels-last)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "conv"):
        self.name = name
        std = 1.0 / np.sqrt(c_in * 9)
        self.w = T.Tensor(rng.normal(0.0, std, size=(3, 3, c_in, c_out)), requires_grad=True, dtype=dtype)
        self.b = T.Tensor(np.zeros((1, 1, 1, c_out)), requires_grad=True, dtype=dtype)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.add(T.conv2d(T.pad2d(x, 1, "zero"), self.w), self.b)

    def parameters(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class MLP(Module):
    """Affine layers with leaky-ReLU between them; final layer is linear."""

    def __init__(self, dims: list[int], rng: np.random.Generator, alpha: float = 0.2,
                 dtype=np.float32, name: str = "mlp"):
        if len(dims) < 2:
            raise ValueError("MLP needs at least one affine layer")
        self.alpha = alpha
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, dtype=dtype, name=f"{name}.{i}")
            for i in range(len(dims) - 1)
        ]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        for layer in self.layers[:-1]:
            x = T.leaky_relu(layer(x), self.alpha)
        return self.layers[-1](x)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def gaussian5_kernel(dtype=np.float32) -> np.ndarray:
    """Fixed 5-tap binomial blur kernel as a (5, 5, 1, 1) conv weight."""
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    return np.outer(k, k).reshape(5, 5, 1, 1).astype(dtype)
