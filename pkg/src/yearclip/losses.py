"""Training objective: CE + KL + L1 year regression + label-distance-weighted contrastive (FCRC).

Every term returns its value together with the gradient w.r.t. its direct
inputs; :mod:`yearclip.train` chains those into parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .errors import ShapeMismatch, ZeroVector
from .records import period_of_year


def lambda_matrix(labels, beta: float = 1.0) -> np.ndarray:
    """Row i holds the negative-sample weights of anchor i; the diagonal is 0.

    Weights are beta*|y_i - y_j| normalized to sum to 1 over j != i. An anchor
    whose negatives all have zero scaled distance falls back to 1/(M-1).
    """
    y = np.asarray(labels, dtype=np.float64)
    m = y.shape[0]
    lam = np.zeros((m, m))
    if m < 2:
        return lam
    raw = beta * np.abs(y[:, None] - y[None, :])
    np.fill_diagonal(raw, 0.0)
    totals = raw.sum(axis=1)
    for i in range(m):
        if totals[i] > 0:
            lam[i] = raw[i] / totals[i]
        else:
            lam[i] = 1.0 / (m - 1)
            lam[i, i] = 0.0
    return lam


def lambda_weights(labels, anchor: int, beta: float = 1.0) -> np.ndarray:
    """Weights over the negatives of ``anchor``, in label order with the anchor removed."""
    row = lambda_matrix(labels, beta)[anchor]
    return np.delete(row, anchor)


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(x, axis=1)
    if np.any(n == 0):
        raise ZeroVector("zero embedding row in contrastive batch")
    return x / n[:, None], n


def fcrc_loss_and_grad(z, w, labels, tau: float = 0.07, beta: float = 1.0) -> tuple[float, np.ndarray]:
    """Loss value and its gradient w.r.t. the image-side rows ``z``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if z.shape != w.shape or z.shape[0] != len(labels):
        raise ShapeMismatch(f"fcrc shapes z={z.shape} w={w.shape} labels={len(labels)}")
    m = z.shape[0]
    zu, zn = _unit_rows(z)
    wu, _ = _unit_rows(w)
    cos = zu @ wu.T
    a = cos / tau
    lam = lambda_matrix(labels, beta)
    # weight 1 for the positive pair, lambda for negatives
    coef = lam.copy()
    np.fill_diagonal(coef, 1.0)
    shift = a.max(axis=1, keepdims=True)
    e = coef * np.exp(a - shift)
    den = e.sum(axis=1)
    diag = np.diagonal(a) - shift[:, 0]
    loss = 0.0
    for i in range(m):
        loss -= diag[i] - np.log(den[i])
    loss /= m
    # dL/da_ij = (P_ij - [i == j]) / M with P the normalized terms
    g_a = e / den[:, None]
    g_a[np.diag_indices(m)] -= 1.0
    g_cos = g_a / (m * tau)
    grad = (g_cos @ wu - (g_cos * cos).sum(axis=1, keepdims=True) * zu) / zn[:, None]
    return float(loss), grad


def fcrc_loss(z, w, labels, tau: float = 0.07, beta: float = 1.0) -> float:
    return fcrc_loss_and_grad(z, w, labels, tau, beta)[0]


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def soft_targets(years, midpoints, sigma_kl: float) -> np.ndarray:
    """q_i proportional to exp(-|b_i - y| / sigma_kl), one row per year."""
    y = np.asarray(years, dtype=np.float64)
    b = np.asarray(midpoints, dtype=np.float64)
    return np.exp(log_softmax(-np.abs(b[None, :] - y[:, None]) / sigma_kl))


@dataclass
class LossResult:
    total: float
    components: dict[str, float]
    d_logits: np.ndarray
    d_delta: np.ndarray
    d_z_input: np.ndarray


def composite_terms(logits, year_hat, z_input, years, midpoints, delta, styles,
                    periods, config: TrainConfig) -> LossResult:
    """All four loss components for a batch plus gradients w.r.t. logits, delta and fused input."""
    logits = np.atleast_2d(logits)
    bsz = logits.shape[0]
    years = np.asarray(years, dtype=np.float64)
    b = np.asarray(midpoints, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    targets = np.array([period_of_year(y, periods) for y in years], dtype=np.int64)
    onehot = np.zeros_like(logits)
    onehot[np.arange(bsz), targets] = 1.0
    logp = log_softmax(logits)
    p = np.exp(logp)

    ce = -float(logp[np.arange(bsz), targets].sum()) / bsz

    q = soft_targets(years, b, config.sigma_kl)
    logq = np.log(np.where(q > 0, q, 1.0))
    kl = float((q * (logq - logp)).sum()) / bsz

    err = year_hat - years
    reg = float(np.abs(err).sum()) / (bsz * config.reg_scale)

    if config.w_fcrc > 0:
        fcrc, g_fcrc = fcrc_loss_and_grad(z_input, styles[targets], years, config.tau, config.beta)
    else:
        fcrc, g_fcrc = 0.0, np.zeros_like(z_input)

    total = config.w_ce * ce + config.w_kl * kl + config.w_reg * reg + config.w_fcrc * fcrc

    d_logits = (config.w_ce * (p - onehot) + config.w_kl * (p - q)) / bsz
    d_yhat = config.w_reg * np.sign(err) / (bsz * config.reg_scale)
    scaled_mid = b / (1.0 + delta)
    d_p = d_yhat[:, None] * scaled_mid[None, :]
    d_logits += p * (d_p - (p * d_p).sum(axis=1, keepdims=True))
    d_delta = -(d_yhat[:, None] * p).sum(axis=0) * b / (1.0 + delta) ** 2
    return LossResult(
        total=float(total),
        components={"ce": ce, "kl": kl, "reg": reg, "fcrc": fcrc},
        d_logits=d_logits,
        d_delta=d_delta,
        d_z_input=config.w_fcrc * g_fcrc,
    )
