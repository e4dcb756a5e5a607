"""Small order-sensitive encoder with hand-written gradients.

A sequence is embedded position by position as ``x_t = E[id_t] + P[t]``,
squashed with ``tanh`` (optionally after inverted dropout), mean-pooled
over its true length and passed through a two-layer ReLU MLP to give the
representation ``h``.  A logistic head turns ``h`` into the matching score.

The per-position ``tanh`` is what makes pooling order-sensitive: without
it the positional term would sum to a constant and token order would be
invisible to the encoder.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .rng import CounterRNG

PARAM_NAMES = ("E", "P", "W1", "b1", "W2", "b2", "w", "b")


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 32
    hidden: int = 64
    max_len: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.vocab_size, self.dim, self.hidden, self.max_len) < 1:
            raise ValueError(f"encoder sizes must be >= 1: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class EncoderParams:
    E: np.ndarray
    P: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w: np.ndarray
    b: np.ndarray  # 0-d

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{k: v.copy() for k, v in self.tensors().items()})

    @classmethod
    def zeros_like(cls, other: "EncoderParams") -> "EncoderParams":
        return cls(**{k: np.zeros_like(v) for k, v in other.tensors().items()})

    @classmethod
    def zeros(cls, cfg: EncoderConfig) -> "EncoderParams":
        V, d, m, L = cfg.vocab_size, cfg.dim, cfg.hidden, cfg.max_len
        return cls(np.zeros((V, d)), np.zeros((L, d)), np.zeros((d, m)), np.zeros(m),
                   np.zeros((m, d)), np.zeros(d), np.zeros(d), np.zeros(()))


def init_params(cfg: EncoderConfig, seed: int | CounterRNG) -> EncoderParams:
    """Weights i.i.d. uniform on [-0.05, 0.05]; biases zero."""
    rng = seed if isinstance(seed, CounterRNG) else CounterRNG(seed)
    p = EncoderParams.zeros(cfg)
    for name in ("E", "P", "W1", "W2", "w"):
        arr = getattr(p, name)
        arr[...] = rng.uniform_array(arr.shape, -0.05, 0.05)
    return p


def dropout_mask(shape, rate: float, rng: CounterRNG) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/(1-rate)."""
    keep = rng.random_array(shape) >= rate
    return keep * (1.0 / (1.0 - rate))


@dataclass
class Activations:
    ids: np.ndarray
    lengths: np.ndarray
    mask: np.ndarray | None
    act: np.ndarray
    pooled: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    h: np.ndarray
    score: np.ndarray


def _check_batch(params: EncoderParams, ids: np.ndarray, lengths: np.ndarray):
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    if ids.ndim != 2 or lengths.shape != (ids.shape[0],):
        raise ValueError(f"ids must be (B, L) with B lengths; got {ids.shape} and {lengths.shape}")
    L = params.P.shape[0]
    if ids.shape[1] > L:
        raise ValueError(f"sequence width {ids.shape[1]} exceeds max_len {L}")
    if lengths.size and lengths.min() < 1:
        raise ValueError("true_len must be >= 1")
    if lengths.size and lengths.max() > ids.shape[1]:
        raise ValueError(f"true_len {lengths.max()} exceeds padded width {ids.shape[1]}")
    return ids, lengths


def forward_batch(params: EncoderParams, ids, lengths, dropout: float = 0.0, rng: CounterRNG | None = None):
    """Encode ``B`` padded sequences at once.

    Returns ``(h, score, acts)`` with ``h`` of shape (B, d) and ``score`` (B,).
    """
    ids, lengths = _check_batch(params, ids, lengths)
    mask = None
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout needs an rng")
        mask = dropout_mask(ids.shape + (params.E.shape[1],), dropout, rng)
    pooled, act = kernels.pool_forward(params.E, params.P, ids, lengths, mask)
    z1 = pooled @ params.W1 + params.b1
    a1 = np.maximum(z1, 0.0)
    h = a1 @ params.W2 + params.b2
    score = 1.0 / (1.0 + np.exp(-(h @ params.w + params.b)))
    return h, score, Activations(ids, lengths, mask, act, pooled, z1, a1, h, score)


def backward_batch(params: EncoderParams, acts: Activations, grad_h, grad_score, out: EncoderParams | None = None):
    """Gradients of ``sum(grad_h * h) + sum(grad_score * score)``.

    Accumulates into ``out`` when given, else into fresh zeros.
    """
    grad_h = np.asarray(grad_h, dtype=np.float64)
    grad_score = np.asarray(grad_score, dtype=np.float64)
    B = acts.h.shape[0]
    if grad_h.shape != acts.h.shape or grad_score.shape != (B,):
        raise ValueError(f"gradient shapes {grad_h.shape}, {grad_score.shape} do not match batch {acts.h.shape}")
    g = out if out is not None else EncoderParams.zeros_like(params)

    g_logit = grad_score * acts.score * (1.0 - acts.score)
    g.w += acts.h.T @ g_logit
    g.b += g_logit.sum()
    g_h = grad_h + np.outer(g_logit, params.w)
    g.W2 += acts.a1.T @ g_h
    g.b2 += g_h.sum(axis=0)
    g_z1 = (g_h @ params.W2.T) * (acts.z1 > 0.0)
    g.W1 += acts.pooled.T @ g_z1
    g.b1 += g_z1.sum(axis=0)
    g_pooled = np.ascontiguousarray(g_z1 @ params.W1.T)
    kernels.pool_backward(g_pooled, acts.ids, acts.lengths, acts.mask, acts.act, g.E, g.P)
    return g


def forward(params: EncoderParams, ids, true_len: int, dropout: float = 0.0, rng: CounterRNG | None = None):
    """Single-sequence form of :func:`forward_batch`; returns ``(h, score, acts)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if true_len < 1:
        raise ValueError("true_len must be >= 1")
    if true_len > params.P.shape[0]:
        raise ValueError(f"true_len {true_len} exceeds max_len {params.P.shape[0]}")
    h, score, acts = forward_batch(params, ids[None, :], np.array([true_len]), dropout, rng)
    return h[0], float(score[0]), acts


def backward(params: EncoderParams, acts: Activations, grad_h, grad_score: float) -> EncoderParams:
    return backward_batch(params, acts, np.asarray(grad_h, dtype=np.float64)[None, :], np.array([grad_score], dtype=np.float64))
