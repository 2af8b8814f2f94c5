"""Reverse-mode gradients, Adam/RAdam with per-group rates, step schedule, training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Optional, Sequence

import numpy as np

from .config import TrainConfig
from .embed_io import EmbeddingMatrix
from .errors import EmptyInput, NonFiniteGradient, ShapeMismatch
from .losses import LossResult, composite_terms
from .model import ForwardState, ModelParams, PromptSet, forward_batch, param_group
from .records import BuildingRecord, Split, midpoints
from .utils import rng_for

log = logging.getLogger(__name__)

GradientSet = dict  # tensor name -> gradient array, same shape as the parameter


@dataclass
class Batch:
    z_raw: np.ndarray  # (B, D_img)
    gps: np.ndarray  # (B, 2), NaN rows where coordinates are missing
    years: np.ndarray  # (B,)
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.z_raw.shape[0]

    def subset(self, idx) -> "Batch":
        ids = tuple(self.ids[i] for i in idx) if self.ids else ()
        return Batch(self.z_raw[idx], self.gps[idx], self.years[idx], ids)


def build_batch(records: Sequence[BuildingRecord], image_emb: EmbeddingMatrix) -> Batch:
    ids = [r.id for r in records]
    gps = np.array([r.gps if r.gps is not None else (np.nan, np.nan) for r in records], dtype=np.float64)
    return Batch(image_emb.take(ids), gps.reshape(-1, 2),
                 np.array([r.year for r in records], dtype=np.float64), tuple(ids))


def composite_loss(state: ForwardState, years, params: ModelParams, prompts: PromptSet,
                   config: TrainConfig) -> tuple[float, dict[str, float]]:
    res = _terms(state, years, params, prompts, config)
    return res.total, res.components


def _terms(state, years, params, prompts, config) -> LossResult:
    return composite_terms(state.logits, state.year_hat, state.z_input, years,
                           midpoints(params.periods), params.regressor.delta, prompts.styles,
                           params.periods, config)


def backward(state: ForwardState, loss: LossResult, params: ModelParams,
             prompts: PromptSet) -> GradientSet:
    """Chain the loss gradients back through regressor, cosine head, fusion, zero-conv and both MLPs."""
    grads: GradientSet = {}

    reg_grads, d_s = params.regressor.mlp.backward(state.reg_cache, loss.d_logits)
    for i, (dw, db) in reg_grads.items():
        grads[f"regressor.{i}.weight"] = dw
        grads[f"regressor.{i}.bias"] = db
    grads["delta"] = loss.d_delta

    # s_c = <z, u_c> / |z|  =>  ds_c/dz = u_c/|z| - s_c z/|z|^2
    zn = state.z_norm[:, None]
    d_z = loss.d_z_input + (d_s @ prompts.unit_targets) / zn \
        - (d_s * state.s).sum(axis=1, keepdims=True) * state.z_input / zn ** 2

    zc = params.zero_conv
    if state.gps_rows.size:
        d_zl = d_z[state.gps_rows]
        grads["zero_conv.weight"] = d_zl.T @ state.z_l_raw
        grads["zero_conv.bias"] = d_zl.sum(axis=0)
        loc_grads, _ = params.location.backward(state.location_cache, d_zl @ zc.weight)
        for i, (dw, db) in loc_grads.items():
            grads[f"location.{i}.weight"] = dw
            grads[f"location.{i}.bias"] = db
    else:
        grads["zero_conv.weight"] = np.zeros_like(zc.weight)
        grads["zero_conv.bias"] = np.zeros_like(zc.bias)
        for name, t in params.location.named_tensors("location").items():
            grads[name] = np.zeros_like(t)

    ad_grads, _ = params.adapter.backward(state.adapter_cache, d_z)
    for i, (dw, db) in ad_grads.items():
        grads[f"adapter.{i}.weight"] = dw
        grads[f"adapter.{i}.bias"] = db

    order = params.named_tensors()
    out = {name: grads[name] for name in order}
    bad = [name for name, g in out.items() if not np.isfinite(g).all()]
    if bad:
        raise NonFiniteGradient(bad)
    return out


def loss_and_grads(params: ModelParams, prompts: PromptSet, batch: Batch,
                   config: TrainConfig) -> tuple[LossResult, GradientSet, ForwardState]:
    state = forward_batch(params, prompts, batch.z_raw, batch.gps)
    res = _terms(state, batch.years, params, prompts, config)
    if not np.isfinite(res.total):
        raise NonFiniteGradient(["loss"])
    return res, backward(state, res, params, prompts), state


def lr_at(epoch: int, config: TrainConfig) -> tuple[float, float]:
    """Multistep decay of both base rates by gamma every ``sched_step`` epochs.

    Decimal arithmetic keeps e.g. 1e-5 * 0.1 at exactly 1e-06 (float gives 1.0000000000000002e-06).
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    factor = Decimal(repr(config.sched_gamma)) ** (epoch // config.sched_step)
    return (float(Decimal(repr(config.lr_main)) * factor),
            float(Decimal(repr(config.lr_adapter)) * factor))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(theta: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
                lr: float, betas=(0.9, 0.999), eps: float = 1e-8, rectify: bool = False) -> None:
    """In-place bias-corrected Adam update of ``theta``; ``m``/``v`` are updated too."""
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    if rectify:
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho_t = rho_inf - 2.0 * t * b2 ** t / (1.0 - b2 ** t)
        if rho_t <= 5.0:
            theta -= lr * m_hat
            return
        r = np.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
        lr = lr * r
    v_hat = v / (1.0 - b2 ** t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


def optimizer_step(params: ModelParams, grads: GradientSet, state: AdamState, config: TrainConfig,
                   lrs: Optional[tuple[float, float]] = None) -> None:
    """One update of every trainable tensor, adapter group at its own rate; delta clamped after."""
    lr_main, lr_adapter = lrs if lrs is not None else (config.lr_main, config.lr_adapter)
    tensors = params.named_tensors()
    state.step += 1
    for name in params.trainable_names():
        theta = tensors[name]
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        lr = lr_adapter if param_group(name) == "adapter" else lr_main
        adam_update(theta, g, state.m[name], state.v[name], state.step, lr,
                    config.betas, config.eps, config.rectify)
    params.regressor.clamp_delta()


def coarse_accuracy(params: ModelParams, prompts: PromptSet, batch: Batch) -> float:
    from .records import period_of_year

    st = forward_batch(params, prompts, batch.z_raw, batch.gps)
    pred = np.argmax(st.probs, axis=1)
    truth = np.array([period_of_year(y, params.periods) for y in batch.years])
    return 100.0 * float((pred == truth).mean())


def batch_mae(params: ModelParams, prompts: PromptSet, batch: Batch) -> float:
    st = forward_batch(params, prompts, batch.z_raw, batch.gps)
    total = 0.0
    for a, b in zip(st.year_hat, batch.years):
        total += abs(float(a) - float(b))
    return total / len(batch)


def train_loop(data: Batch, params: ModelParams, prompts: PromptSet, config: TrainConfig,
               val: Optional[Batch] = None,
               on_epoch: Optional[Callable[[dict], None]] = None) -> tuple[ModelParams, list[dict]]:
    """Minibatch training from a seeded shuffle; returns updated params and one log row per epoch.

    ``params`` is updated in place and also returned.
    """
    if len(data) == 0:
        raise EmptyInput("no training records")
    rng = rng_for(config.seed, "shuffle")
    opt = AdamState()
    history = []
    for epoch in range(config.epochs):
        lrs = lr_at(epoch, config)
        order = rng.permutation(len(data))
        sums = {"ce": 0.0, "kl": 0.0, "reg": 0.0, "fcrc": 0.0, "total": 0.0}
        for start in range(0, len(data), config.batch):
            batch = data.subset(order[start : start + config.batch])
            res, grads, _ = loss_and_grads(params, prompts, batch, config)
            optimizer_step(params, grads, opt, config, lrs)
            n = len(batch)
            for k, v in res.components.items():
                sums[k] += v * n
            sums["total"] += res.total * n
        row = {"epoch": epoch, "lr_main": lrs[0], "lr_adapter": lrs[1]}
        row.update({k: v / len(data) for k, v in sums.items()})
        row["val_mae"] = batch_mae(params, prompts, val) if val is not None and len(val) else None
        if not all(np.isfinite(v) for k, v in row.items() if isinstance(v, float)):
            raise NonFiniteGradient([f"epoch {epoch} loss log"])
        history.append(row)
        log.debug("epoch %d total %.5f", epoch, row["total"])
        if on_epoch is not None:
            on_epoch(row)
    return params, history


def select_split(records: Sequence[BuildingRecord], split: Split) -> list[BuildingRecord]:
    return [r for r in records if r.split is split]
