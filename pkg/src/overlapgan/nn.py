"""
Layers for the fixed toy architectures: fully connected layers and a tiny
module container that names its parameters.
"""

import numpy as np

from overlapgan.tensor import Tensor


class Module:
    """Base class: subclasses register ``Linear`` layers / sub-modules as attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                params[f"{prefix}{attr}"] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{prefix}{attr}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{prefix}{attr}.{i}."))
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {name: p.grad for name, p in self.named_parameters().items() if p.grad is not None}


class Linear(Module):
    """Fully connected layer ``x @ W + b`` with Glorot-uniform weights."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)
        self.fan_in = fan_in
        self.fan_out = fan_out

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


def mlp_layers(sizes: list[int], rng: np.random.Generator) -> list[Linear]:
    """Consecutive ``Linear`` layers for ``sizes[0] -> sizes[1] -> ...``."""
    return [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
