"""Coarse-to-fine ordinal head: similarities, period probabilities, year, attributions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeMismatch, ZeroVector
from .layers import Mlp, init_mlp
from .records import DEFAULT_PERIODS, ReasonBank, StylePeriod

TOP_REASONS = 5
DELTA_LIMIT = 0.4


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cosine of shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity with a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def row_norms(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1)
    if np.any(n == 0):
        raise ZeroVector("zero-norm embedding row")
    return n


def similarity_vector(z_input, styles, reasons) -> np.ndarray:
    """Cosine similarities to every style row, then every reason-subcategory row.

    ``z_input`` may be a single vector or a (B, D) batch.
    """
    z = np.asarray(z_input, dtype=np.float64)
    targets = np.vstack([np.asarray(styles, dtype=np.float64), np.asarray(reasons, dtype=np.float64)])
    if z.shape[-1] != targets.shape[1]:
        raise ShapeMismatch(f"input dim {z.shape[-1]} != prompt embedding dim {targets.shape[1]}")
    t_hat = targets / row_norms(targets)[:, None]
    zn = row_norms(z)
    return (z @ t_hat.T) / (zn[..., None] if z.ndim > 1 else zn)


@dataclass
class RegressorParams:
    mlp: Mlp
    delta: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def clamp_delta(self) -> None:
        np.clip(self.delta, -DELTA_LIMIT, DELTA_LIMIT, out=self.delta)


def init_regressor(rng: np.random.Generator, n_inputs: int, hidden: int = 64, n_periods: int = 7,
                   activation: str = "gelu") -> RegressorParams:
    return RegressorParams(init_mlp(rng, [n_inputs, hidden, n_periods], hidden_activation=activation),
                           np.zeros(n_periods))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def regressor_forward(s, reg: RegressorParams, cache: list | None = None) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != reg.mlp.in_dim:
        raise ShapeMismatch(f"s-vector length {s.shape[-1]} != regressor input {reg.mlp.in_dim}")
    return softmax(reg.mlp.forward(s, cache))


def predict_year(probs, periods: Sequence[StylePeriod] = DEFAULT_PERIODS, delta=None) -> np.ndarray | float:
    probs = np.asarray(probs, dtype=np.float64)
    b = np.array([p.midpoint for p in periods])
    d = np.zeros_like(b) if delta is None else np.asarray(delta, dtype=np.float64)
    out = probs @ (b / (1.0 + d))
    return float(out) if np.ndim(out) == 0 else out


def coarse_class(probs) -> int | np.ndarray:
    """Argmax period; ``np.argmax`` already breaks ties toward the lowest index."""
    out = np.argmax(np.asarray(probs), axis=-1)
    return int(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ReasonAttribution:
    reason: str
    subcategory: str
    importance: float

    def to_json(self) -> dict:
        return {"reason": self.reason, "subcategory": self.subcategory, "importance": self.importance}


@dataclass
class PredictionOutput:
    id: str
    year_hat: float
    probs: np.ndarray
    style_sims: np.ndarray
    reason_sims: np.ndarray
    top_reasons: list[ReasonAttribution]

    @property
    def coarse_period(self) -> int:
        return coarse_class(self.probs)

    def to_json(self, periods: Sequence[StylePeriod] = DEFAULT_PERIODS) -> dict:
        return {
            "id": self.id,
            "year_hat": float(self.year_hat),
            "coarse_period": periods[self.coarse_period].name,
            "probs": [float(p) for p in self.probs],
            "top_reasons": [r.to_json() for r in self.top_reasons],
        }


def logit_input_grad(s, reg: RegressorParams, period: int) -> np.ndarray:
    """d logit[period] / d s through the regressor MLP."""
    cache: list = []
    logits = reg.mlp.forward(np.asarray(s, dtype=np.float64), cache)
    onehot = np.zeros_like(logits)
    onehot[period] = 1.0
    _, grad_s = reg.mlp.backward(cache, onehot)
    return grad_s


def subcategory_importance(s, reg: RegressorParams, probs, n_styles: int = 7) -> np.ndarray:
    """Similarity times the winning period's logit sensitivity, per reason subcategory."""
    s = np.asarray(s, dtype=np.float64)
    grad = logit_input_grad(s, reg, coarse_class(probs))
    return s[n_styles:] * grad[n_styles:]


def reasoning_importance(s, reg: RegressorParams, bank: ReasonBank, probs,
                         n_styles: int = 7, top_k: int = TOP_REASONS) -> list[ReasonAttribution]:
    imp = subcategory_importance(s, reg, probs, n_styles)
    if imp.shape[0] != bank.n_subcategories:
        raise ShapeMismatch(f"{imp.shape[0]} reason similarities for a bank of {bank.n_subcategories}")
    scored = []
    for j, (reason, sl) in enumerate(zip(bank.reasons, bank.slices())):
        part = imp[sl]
        best = int(np.argmax(part))
        total = 0.0
        for v in part:
            total += float(v)
        scored.append((-total, j, ReasonAttribution(reason.name, reason.subcategories[best].label, total)))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [t[2] for t in scored[:top_k]]
