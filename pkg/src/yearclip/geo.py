"""Image adapter, RFF location encoder, zero-convolution and additive fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeMismatch
from .layers import Mlp, init_mlp


@dataclass(frozen=True)
class RffParams:
    """Fixed Gaussian frequencies; ``freqs`` is (F, 2) drawn N(0, sigma^2) from ``seed``."""

    freqs: np.ndarray
    sigma: float
    seed: int

    @property
    def n_freq(self) -> int:
        return self.freqs.shape[0]


def make_rff(n_freq: int, sigma: float, seed: int) -> RffParams:
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    rng = np.random.default_rng(seed)
    return RffParams(rng.normal(0.0, sigma, size=(n_freq, 2)), float(sigma), int(seed))


def rff_encode(lat, lon, rff: RffParams) -> np.ndarray:
    """sqrt(1/F) * [sin(Wx), cos(Wx)] with x = (lat/90, lon/180).

    Accepts scalars or equal-length arrays; the output is (2F,) or (B, 2F)
    and always has unit L2 norm per row.
    """
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    x = np.stack([lat / 90.0, lon / 180.0], axis=-1)
    proj = x @ rff.freqs.T
    scale = np.sqrt(1.0 / rff.n_freq)
    return scale * np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


def adapter_forward(z_v_raw, mlp: Mlp, cache: list | None = None) -> np.ndarray:
    return mlp.forward(z_v_raw, cache)


def location_forward(gps, rff: RffParams, loc_mlp: Mlp, cache: list | None = None) -> np.ndarray:
    """``gps`` is a (lat, lon) pair or a (B, 2) array."""
    gps = np.asarray(gps, dtype=np.float64)
    if loc_mlp.in_dim != 2 * rff.n_freq:
        raise ShapeMismatch(f"location MLP expects {loc_mlp.in_dim} inputs, RFF gives {2 * rff.n_freq}")
    return loc_mlp.forward(rff_encode(gps[..., 0], gps[..., 1], rff), cache)


@dataclass
class ZeroConvParams:
    weight: np.ndarray  # (D, D)
    bias: np.ndarray  # (D,)

    @classmethod
    def zeros(cls, dim: int) -> "ZeroConvParams":
        return cls(np.zeros((dim, dim)), np.zeros(dim))


def zero_conv(z_l_raw, zc: ZeroConvParams) -> np.ndarray:
    z = np.asarray(z_l_raw, dtype=np.float64)
    if z.shape[-1] != zc.weight.shape[1]:
        raise ShapeMismatch(f"zero-conv expects dim {zc.weight.shape[1]}, got {z.shape[-1]}")
    return z @ zc.weight.T + zc.bias


def fuse(z_v, z_l: Optional[np.ndarray] = None) -> np.ndarray:
    z_v = np.asarray(z_v, dtype=np.float64)
    if z_l is None:
        return z_v
    z_l = np.asarray(z_l, dtype=np.float64)
    if z_l.shape != z_v.shape:
        raise ShapeMismatch(f"cannot fuse shapes {z_v.shape} and {z_l.shape}")
    return z_v + z_l


def init_adapter(rng: np.random.Generator, img_dim: int, dim: int, activation: str = "gelu") -> Mlp:
    return init_mlp(rng, [img_dim, dim, dim], hidden_activation=activation)


def init_location_mlp(rng: np.random.Generator, n_freq: int, dim: int, activation: str = "gelu") -> Mlp:
    return init_mlp(rng, [2 * n_freq, dim, dim], hidden_activation=activation)
