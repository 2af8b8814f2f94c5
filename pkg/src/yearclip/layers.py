"""Dense layers and MLPs with hand-written reverse-mode passes (float64)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ShapeMismatch

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "identity":
        return x
    if name == "tanh":
        return np.tanh(x)
    if name == "gelu":
        return x * ndtr(x)
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name: str, x: np.ndarray) -> np.ndarray:
    """Elementwise derivative of the activation at pre-activation ``x``."""
    if name == "identity":
        return np.ones_like(x)
    if name == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if name == "gelu":
        return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    layers: list[Dense]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeMismatch(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")
        for layer in self.layers:
            if layer.bias.shape != (layer.out_dim,):
                raise ShapeMismatch("bias shape does not match weight rows")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def named_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = layer.weight
            out[f"{prefix}.{i}.bias"] = layer.bias
        return out

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Row-batched forward pass. ``x`` is (in,) or (B, in)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatch(f"input dim {x.shape[-1]} != layer input {self.in_dim}")
        for layer in self.layers:
            pre = x @ layer.weight.T + layer.bias
            if cache is not None:
                cache.append((x, pre))
            x = activate(layer.activation, pre)
        return x

    def backward(self, cache: list, grad_out: np.ndarray) -> tuple[dict[int, tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Gradients per layer index as (dW, db) plus the gradient w.r.t. the input."""
        grads = {}
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            x, pre = cache[i]
            g = g * activate_grad(layer.activation, pre)
            if g.ndim == 1:
                grads[i] = (np.outer(g, x), g.copy())
            else:
                grads[i] = (g.T @ x, g.sum(axis=0))
            g = g @ layer.weight
        return grads, g


def init_mlp(
    rng: np.random.Generator,
    sizes: list[int],
    hidden_activation: str = "gelu",
    out_activation: str = "identity",
) -> Mlp:
    """Gaussian init scaled by 1/sqrt(fan_in), zero biases."""
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        act = out_activation if i == len(sizes) - 2 else hidden_activation
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        layers.append(Dense(w, np.zeros(fan_out), act))
    return Mlp(layers)
