"""Affine layers and MLP stacks on top of :mod:`anchorreg.grad_core`."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .grad_core import Tensor, affine, relu


class Linear:
    """``y = x W + b``; weights uniform in +-sqrt(6/fan_in), bias zero."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str):
        if fan_in < 1 or fan_out < 1:
            raise ValueError(f"layer dims must be positive, got {fan_in}x{fan_out}")
        bound = np.sqrt(6.0 / fan_in)
        self.W = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=f"{name}.W")
        self.b = Tensor(np.zeros((1, fan_out)), requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.W, self.b)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]

    @property
    def out_dim(self) -> int:
        return self.W.cols


class MLP:
    """Affine+ReLU hidden layers followed by a plain affine output layer."""

    def __init__(self, in_dim: int, hidden: Sequence[int], out_dim: int, rng: np.random.Generator, name: str):
        dims = [in_dim, *hidden, out_dim]
        self.layers = [Linear(dims[i], dims[i + 1], rng, f"{name}.{i}") for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = relu(layer(x))
        return self.layers[-1](x)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.rows

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def snapshot(params: Sequence[Tensor]) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in params}
