"""Parameter-holding building blocks on top of :mod:`plate.numcore`."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .numcore import Tensor


class Module:
    """Minimal container: parameters are Tensor attributes, children are Module attributes."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self):
        return dict(self.named_parameters())

    def num_parameters(self):
        return int(sum(p.data.size for _, p in self.named_parameters()))

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None


def _param(array):
    return Tensor(array, requires_grad=True)


class Linear(Module):
    def __init__(self, rng, n_in, n_out, bias=True):
        self.weight = _param(nc.uniform_init(rng, n_in, (n_in, n_out)))
        self.bias = _param(nc.uniform_init(rng, n_in, (n_out,))) if bias else None

    def __call__(self, x):
        return nc.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gamma = _param(np.ones(dim))
        self.beta = _param(np.zeros(dim))

    def __call__(self, x):
        return nc.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, rng, num, dim):
        self.table = _param(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(num, dim)))

    def __call__(self, ids):
        return nc.embedding(self.table, ids)


class MLP(Module):
    """Stack of Linear layers with Leaky-ReLU between them (none after the last)."""

    def __init__(self, rng, sizes, slope=0.01):
        self.layers = [Linear(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        self.slope = slope

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = nc.leaky_relu(x, self.slope)
        return x
