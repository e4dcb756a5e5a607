"""Adam with bias correction and a linearly decaying learning rate."""
from __future__ import annotations

import math

import numpy as np

from .encoder import EncoderParams

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class NonFiniteGradient(FloatingPointError):
    pass


class Moments:
    def __init__(self, m: EncoderParams, v: EncoderParams):
        self.m = m
        self.v = v

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> "Moments":
        return cls(EncoderParams.zeros_like(params), EncoderParams.zeros_like(params))


def decayed_lr(lr: float, step: int, total_steps: int) -> float:
    """Learning rate for 0-based update ``step``; reaches 0 at ``total_steps``."""
    if total_steps <= 0:
        return lr
    return lr * max(0.0, 1.0 - step / total_steps)


def global_norm(grads: EncoderParams) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.tensors().values()))


def clip_by_global_norm(grads: EncoderParams, max_norm: float) -> float:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.tensors().values():
            g *= scale
    return norm


def optimizer_step(params: EncoderParams, grads: EncoderParams, moments: Moments, step: int,
                   lr: float, total_steps: int) -> float:
    """One in-place Adam update at 0-based ``step``; returns the learning rate used."""
    gt = grads.tensors()
    for name, g in gt.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in tensor {name!r} at step {step}")
    lr_t = decayed_lr(lr, step, total_steps)
    t = step + 1
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    pt, mt, vt = params.tensors(), moments.m.tensors(), moments.v.tensors()
    for name, g in gt.items():
        m, v = mt[name], vt[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        if lr_t > 0.0:
            pt[name] -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + EPS)
    return lr_t
