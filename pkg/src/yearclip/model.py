"""Trainable parameter container and the batched forward pass."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embed_io import EmbeddingMatrix, read_checkpoint, write_checkpoint
from .errors import MissingInput, ShapeMismatch, ValidationError
from .geo import (
    RffParams,
    ZeroConvParams,
    adapter_forward,
    fuse,
    init_adapter,
    init_location_mlp,
    make_rff,
    rff_encode,
    zero_conv,
)
from .head import (
    PredictionOutput,
    RegressorParams,
    init_regressor,
    predict_year,
    reasoning_importance,
    softmax,
    row_norms,
)
from .layers import Dense, Mlp
from .records import DEFAULT_PERIODS, ROOF_BANK, ReasonBank, StylePeriod
from .utils import derive_seed, rng_for


@dataclass
class PromptSet:
    """Frozen text-side embeddings: one row per style period, one per reason subcategory."""

    styles: np.ndarray  # (n_periods, D)
    reasons: np.ndarray  # (n_subcategories, D)
    bank: ReasonBank = ROOF_BANK
    periods: tuple[StylePeriod, ...] = DEFAULT_PERIODS

    def __post_init__(self):
        self.styles = np.asarray(self.styles, dtype=np.float64)
        self.reasons = np.asarray(self.reasons, dtype=np.float64)
        if self.styles.shape[0] != len(self.periods):
            raise ShapeMismatch(f"{self.styles.shape[0]} style rows for {len(self.periods)} periods")
        if self.reasons.shape[0] != self.bank.n_subcategories:
            raise ShapeMismatch(f"{self.reasons.shape[0]} reason rows for {self.bank.n_subcategories} subcategories")
        if self.styles.shape[1] != self.reasons.shape[1]:
            raise ShapeMismatch("style and reason embeddings differ in dim")
        targets = np.vstack([self.styles, self.reasons])
        self.unit_targets = targets / row_norms(targets)[:, None]

    @property
    def dim(self) -> int:
        return self.styles.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.styles.shape[0] + self.reasons.shape[0]

    def s_order(self) -> list[str]:
        return [p.name for p in self.periods] + self.bank.keys()

    @classmethod
    def from_embeddings(cls, style_emb: EmbeddingMatrix, reason_emb: EmbeddingMatrix,
                        bank: ReasonBank = ROOF_BANK,
                        periods: Sequence[StylePeriod] = DEFAULT_PERIODS) -> "PromptSet":
        """Style rows are looked up by period name, reason rows by ``"reason:label"``."""
        names = [p.name for p in periods]
        missing = [n for n in names if n not in style_emb] + [k for k in bank.keys() if k not in reason_emb]
        if missing:
            raise MissingInput("prompt embeddings missing for: " + ", ".join(missing))
        return cls(style_emb.take(names), reason_emb.take(bank.keys()), bank, tuple(periods))


@dataclass
class ModelParams:
    adapter: Mlp
    rff: RffParams
    location: Mlp
    zero_conv: ZeroConvParams
    regressor: RegressorParams
    periods: tuple[StylePeriod, ...] = DEFAULT_PERIODS
    freeze_location: bool = False

    @property
    def dim(self) -> int:
        return self.adapter.out_dim

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Every trainable tensor by name. The arrays are live references."""
        out = {}
        out.update(self.adapter.named_tensors("adapter"))
        out.update(self.location.named_tensors("location"))
        out["zero_conv.weight"] = self.zero_conv.weight
        out["zero_conv.bias"] = self.zero_conv.bias
        out.update(self.regressor.mlp.named_tensors("regressor"))
        out["delta"] = self.regressor.delta
        return out

    def trainable_names(self) -> list[str]:
        names = list(self.named_tensors())
        if self.freeze_location:
            names = [n for n in names if not n.startswith("location.")]
        return names

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def meta(self) -> dict:
        return {
            "rff_sigma": self.rff.sigma,
            "rff_seed": self.rff.seed,
            "activations": {
                "adapter": [l.activation for l in self.adapter.layers],
                "location": [l.activation for l in self.location.layers],
                "regressor": [l.activation for l in self.regressor.mlp.layers],
            },
            "periods": [[p.name, p.start, p.end] for p in self.periods],
            "freeze_location": self.freeze_location,
        }


def param_group(name: str) -> str:
    return "adapter" if name.startswith("adapter.") else "main"


def init_params(img_dim: int, dim: int, n_inputs: int, seed: int, n_freq: int = 64,
                rff_sigma: float = 4.0, reg_hidden: int = 64, activation: str = "gelu",
                periods: Sequence[StylePeriod] = DEFAULT_PERIODS,
                freeze_location: bool = False) -> ModelParams:
    """Fresh parameters; zero-conv and delta start at exactly zero."""
    return ModelParams(
        adapter=init_adapter(rng_for(seed, "init.adapter"), img_dim, dim, activation),
        rff=make_rff(n_freq, rff_sigma, derive_seed(seed, "init.rff")),
        location=init_location_mlp(rng_for(seed, "init.location"), n_freq, dim, activation),
        zero_conv=ZeroConvParams.zeros(dim),
        regressor=init_regressor(rng_for(seed, "init.regressor"), n_inputs, reg_hidden,
                                 len(periods), activation),
        periods=tuple(periods),
        freeze_location=freeze_location,
    )


@dataclass
class ForwardState:
    """Everything the backward pass needs from one batched forward pass."""

    z_raw: np.ndarray
    gps_rows: np.ndarray  # indices of rows that carry GPS
    adapter_cache: list = field(default_factory=list)
    location_cache: list = field(default_factory=list)
    reg_cache: list = field(default_factory=list)
    z_v: np.ndarray | None = None
    z_l_raw: np.ndarray | None = None
    z_input: np.ndarray | None = None
    z_norm: np.ndarray | None = None
    s: np.ndarray | None = None
    logits: np.ndarray | None = None
    probs: np.ndarray | None = None
    year_hat: np.ndarray | None = None


def forward_batch(params: ModelParams, prompts: PromptSet, z_raw, gps=None) -> ForwardState:
    """Forward pass for B samples.

    ``gps`` is a (B, 2) array with NaN rows (or ``None``) for samples without
    coordinates; those samples use the image embedding alone.
    """
    z_raw = np.atleast_2d(np.asarray(z_raw, dtype=np.float64))
    if gps is None:
        gps_rows = np.zeros(0, dtype=np.int64)
    else:
        gps = np.asarray(gps, dtype=np.float64).reshape(-1, 2)
        if gps.shape[0] != z_raw.shape[0]:
            raise ShapeMismatch("gps rows do not match image rows")
        gps_rows = np.flatnonzero(~np.isnan(gps).any(axis=1))
    st = ForwardState(z_raw=z_raw, gps_rows=gps_rows)
    st.z_v = adapter_forward(z_raw, params.adapter, st.adapter_cache)
    if st.z_v.shape[1] != prompts.dim:
        raise ShapeMismatch(f"adapter output dim {st.z_v.shape[1]} != prompt dim {prompts.dim}")
    z_in = st.z_v
    if gps_rows.size:
        g = gps[gps_rows]
        enc = rff_encode(g[:, 0], g[:, 1], params.rff)
        if params.location.in_dim != enc.shape[1]:
            raise ShapeMismatch("location MLP input does not match RFF width")
        st.z_l_raw = params.location.forward(enc, st.location_cache)
        z_l = np.zeros_like(st.z_v)
        z_l[gps_rows] = zero_conv(st.z_l_raw, params.zero_conv)
        z_in = z_in.copy()
        z_in[gps_rows] = fuse(st.z_v[gps_rows], z_l[gps_rows])
    st.z_input = z_in
    st.z_norm = row_norms(z_in)
    st.s = (z_in @ prompts.unit_targets.T) / st.z_norm[:, None]
    st.logits = params.regressor.mlp.forward(st.s, st.reg_cache)
    st.probs = softmax(st.logits)
    st.year_hat = predict_year(st.probs, params.periods, params.regressor.delta)
    return st


def predict(params: ModelParams, prompts: PromptSet, ids: Sequence[str], z_raw, gps=None,
            with_reasons: bool = True) -> list[PredictionOutput]:
    st = forward_batch(params, prompts, z_raw, gps)
    n_styles = len(params.periods)
    out = []
    for i, rid in enumerate(ids):
        s = st.s[i]
        top = (reasoning_importance(s, params.regressor, prompts.bank, st.probs[i], n_styles)
               if with_reasons else [])
        out.append(PredictionOutput(rid, float(st.year_hat[i]), st.probs[i], s[:n_styles], s[n_styles:], top))
    return out


def save_params(path: str | Path, params: ModelParams, prompts: Optional[PromptSet] = None,
                extra: Optional[dict] = None) -> None:
    tensors = dict(params.named_tensors())
    tensors["rff.freqs"] = params.rff.freqs
    meta = params.meta()
    if prompts is not None:
        meta["s_order"] = prompts.s_order()
        meta["bank"] = prompts.bank.to_json()
    if extra:
        meta.update(extra)
    write_checkpoint(path, tensors, meta)


def _load_mlp(tensors: dict, prefix: str, activations: list[str]) -> Mlp:
    layers = []
    for i, act in enumerate(activations):
        layers.append(Dense(tensors[f"{prefix}.{i}.weight"].astype(np.float64),
                            tensors[f"{prefix}.{i}.bias"].astype(np.float64), act))
    return Mlp(layers)


def load_params(path: str | Path) -> tuple[ModelParams, dict]:
    tensors, meta = read_checkpoint(path)
    try:
        acts = meta["activations"]
        periods = tuple(StylePeriod(n, s, e) for n, s, e in meta["periods"])
        params = ModelParams(
            adapter=_load_mlp(tensors, "adapter", acts["adapter"]),
            rff=RffParams(tensors["rff.freqs"].astype(np.float64), meta["rff_sigma"], meta["rff_seed"]),
            location=_load_mlp(tensors, "location", acts["location"]),
            zero_conv=ZeroConvParams(tensors["zero_conv.weight"].astype(np.float64),
                                     tensors["zero_conv.bias"].astype(np.float64)),
            regressor=RegressorParams(_load_mlp(tensors, "regressor", acts["regressor"]),
                                      tensors["delta"].astype(np.float64)),
            periods=periods,
            freeze_location=bool(meta.get("freeze_location", False)),
        )
    except KeyError as exc:
        raise ValidationError(f"checkpoint {path} missing entry {exc.args[0]!r}") from None
    return params, meta
