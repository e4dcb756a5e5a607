"""Supervised contrastive loss with a hard-negative penalty, BCE, and their sum.

For anchors ``h_i``, positive views ``h+_i`` and dataset hard negatives
``h-_i`` the contrastive term is::

    L_scl = -sum_i log( exp(f(h_i, h+_i)/tau) / Z_i )
    Z_i   =  sum_j exp(f(h_i, h+_j)/tau) + exp((f(h_i, h-_j) + alpha*[i == j])/tau)

with ``f`` the cosine similarity.  Each ``Z_i`` is normalised per anchor
and evaluated with a max-shift, since at ``tau = 0.05`` exponents reach 20+.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BCE_EPS = 1e-12


class ZeroNormError(ValueError):
    """Cosine similarity requested for a zero vector."""


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.05
    alpha: float = 1.0
    lam: float = 1.0
    use_scl: bool = True
    ce_views: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be >= 0")


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroNormError("cosine similarity is undefined for a zero vector")
    return float(u @ v / (nu * nv))


def _normalize(H: np.ndarray, name: str):
    norms = np.linalg.norm(H, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormError(f"{name} contains a zero-norm representation at row {int(np.argmin(norms))}")
    return H / norms[:, None], norms


def _through_norm(g_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(h/|h|)/dh applied to an upstream gradient
    return (g_unit - unit * np.sum(g_unit * unit, axis=1, keepdims=True)) / norms[:, None]


def scl_loss(H, Hp, Hn, cfg: LossConfig):
    """Contrastive loss and its gradients with respect to ``H``, ``Hp``, ``Hn``."""
    H, Hp, Hn = (np.asarray(a, dtype=np.float64) for a in (H, Hp, Hn))
    if not (H.shape == Hp.shape == Hn.shape) or H.ndim != 2 or H.shape[0] < 1:
        raise ValueError(f"representation batches must share a (N, d) shape: {H.shape}, {Hp.shape}, {Hn.shape}")
    N = H.shape[0]
    A, nA = _normalize(H, "H")
    Pn, nP = _normalize(Hp, "H+")
    Nn, nN = _normalize(Hn, "H-")

    logits = np.empty((N, 2 * N))
    logits[:, :N] = (A @ Pn.T) / cfg.tau
    logits[:, N:] = (A @ Nn.T + cfg.alpha * np.eye(N)) / cfg.tau
    shift = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - shift)
    Z = ex.sum(axis=1, keepdims=True)
    log_z = np.log(Z[:, 0]) + shift[:, 0]
    loss = float(np.sum(log_z - np.diag(logits[:, :N])))

    prob = ex / Z
    g_logits = prob
    g_logits[np.arange(N), np.arange(N)] -= 1.0
    g_pos = g_logits[:, :N] / cfg.tau
    g_neg = g_logits[:, N:] / cfg.tau

    gA = g_pos @ Pn + g_neg @ Nn
    gP = g_pos.T @ A
    gN = g_neg.T @ A
    return loss, _through_norm(gA, A, nA), _through_norm(gP, Pn, nP), _through_norm(gN, Nn, nN)


def bce_loss(scores, labels):
    """Mean binary cross-entropy.

    Returns ``(loss, grad_per_score, n_clamped)``; scores are clamped to
    ``[1e-12, 1 - 1e-12]`` and the number of clamped entries reported.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1 or s.size == 0:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be matching non-empty vectors")
    clipped = np.clip(s, BCE_EPS, 1.0 - BCE_EPS)
    n_clamped = int(np.count_nonzero(clipped != s))
    n = s.size
    loss = float(-np.sum(y * np.log(clipped) + (1.0 - y) * np.log1p(-clipped)) / n)
    grad = (clipped - y) / (clipped * (1.0 - clipped)) / n
    return loss, grad, n_clamped


@dataclass
class TotalLoss:
    loss: float
    scl: float
    ce: float
    g_anchor: np.ndarray
    g_view: np.ndarray
    g_neg: np.ndarray
    gs_anchor: np.ndarray
    gs_view: np.ndarray
    gs_neg: np.ndarray
    n_clamped: int = 0


def total_loss(H, Hp, Hn, s_anchor, s_neg, cfg: LossConfig, s_view=None) -> TotalLoss:
    """``L = L_scl + lam * L_ce``.

    The cross-entropy covers anchors (label 1) and hard negatives (label 0);
    views join it with label 1 only when ``cfg.ce_views`` is set.  Gradients
    come back per representation and per score.
    """
    H, Hp, Hn = (np.asarray(a, dtype=np.float64) for a in (H, Hp, Hn))
    s_anchor = np.asarray(s_anchor, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    if cfg.use_scl:
        scl, gA, gP, gN = scl_loss(H, Hp, Hn, cfg)
    else:
        scl, gA, gP, gN = 0.0, np.zeros_like(H), np.zeros_like(Hp), np.zeros_like(Hn)

    parts = [s_anchor, s_neg]
    labels = [np.ones_like(s_anchor), np.zeros_like(s_neg)]
    if cfg.ce_views:
        if s_view is None:
            raise ValueError("ce_views needs view scores")
        s_view = np.asarray(s_view, dtype=np.float64)
        parts.append(s_view)
        labels.append(np.ones_like(s_view))
    ce, g_s, n_clamped = bce_loss(np.concatenate(parts), np.concatenate(labels))
    g_s = cfg.lam * g_s
    na, nn = s_anchor.size, s_neg.size
    gs_view = g_s[na + nn :] if cfg.ce_views else np.zeros(0 if s_view is None else len(s_view))
    total = scl + cfg.lam * ce
    if not math.isfinite(total):
        raise FloatingPointError(f"non-finite loss (scl={scl}, ce={ce})")
    return TotalLoss(total, scl, ce, gA, gP, gN, g_s[:na], gs_view, g_s[na : na + nn], n_clamped)
