"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .model import ModelParams, PromptSet, forward_batch, init_params
from .records import DEFAULT_PERIODS, ROOF_BANK, ReasonBank
from .train import Batch, _terms, loss_and_grads
from .utils import rng_for

# Central differences at h=1e-5 in float64 carry ~1e-10 absolute round-off, so a
# 1e-4 relative test only resolves gradients above ~1e-6; smaller entries are
# measured against this floor instead of their own magnitude.
REL_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    max_rel_err: float
    per_tensor: dict[str, float]
    n_checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def total_loss(params: ModelParams, prompts: PromptSet, batch: Batch, config: TrainConfig) -> float:
    st = forward_batch(params, prompts, batch.z_raw, batch.gps)
    return _terms(st, batch.years, params, prompts, config).total


def check_gradients(params: ModelParams, prompts: PromptSet, batch: Batch, config: TrainConfig,
                    h: float = 1e-5) -> GradcheckResult:
    _, grads, _ = loss_and_grads(params, prompts, batch, config)
    tensors = params.named_tensors()
    per_tensor = {}
    n = 0
    for name, theta in tensors.items():
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        num_flat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = total_loss(params, prompts, batch, config)
            flat[k] = orig - h
            down = total_loss(params, prompts, batch, config)
            flat[k] = orig
            num_flat[k] = (up - down) / (2 * h)
        n += flat.size
        per_tensor[name] = float(relative_error(grads[name], numeric).max())
    return GradcheckResult(max(per_tensor.values()), per_tensor, n)


def random_problem(dim: int = 8, batch: int = 4, seed: int = 0, n_freq: int = 4,
                   img_dim: int | None = None, bank: ReasonBank = ROOF_BANK,
                   randomize_all: bool = True, reg_hidden: int = 64):
    """Synthetic params, prompts and batch for gradient checks.

    With ``randomize_all`` the zero-conv and delta tensors get random values so
    every path carries a nonzero gradient; otherwise they keep their zero init.
    """
    img_dim = img_dim or dim
    rng = rng_for(seed, "gradcheck.data")
    prompts = PromptSet(rng.normal(size=(len(DEFAULT_PERIODS), dim)),
                        rng.normal(size=(bank.n_subcategories, dim)), bank, DEFAULT_PERIODS)
    params = init_params(img_dim, dim, prompts.n_inputs, seed, n_freq=n_freq, reg_hidden=reg_hidden)
    if randomize_all:
        params.zero_conv.weight[...] = rng.normal(0.0, 0.5, size=params.zero_conv.weight.shape)
        params.zero_conv.bias[...] = rng.normal(0.0, 0.5, size=params.zero_conv.bias.shape)
        params.regressor.delta[...] = rng.uniform(-0.2, 0.2, size=params.regressor.delta.shape)
        for layer in params.regressor.mlp.layers + params.adapter.layers + params.location.layers:
            layer.bias[...] = rng.normal(0.0, 0.1, size=layer.bias.shape)
    years = rng.integers(1001, 2025, size=batch).astype(np.float64)
    gps = np.column_stack([rng.uniform(-90, 90, size=batch), rng.uniform(-180, 180, size=batch)])
    if batch > 1:
        gps[-1] = np.nan  # one sample exercises the image-only path
    data = Batch(rng.normal(size=(batch, img_dim)), gps, years,
                 tuple(f"g{i}" for i in range(batch)))
    return params, prompts, data
