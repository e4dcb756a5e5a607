"""Positive views for contrastive training.

STS shuffles the tokens of one context utterance, SR swaps two context
utterances other than the last, TL stacks an STS block and an SR block
over a duplicated batch, and DROP leaves tokens alone and asks the encoder
for a dropout pass instead.  Responses and labels are never touched.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .corpus import Triple
from .rng import CounterRNG


class ViewStrategy(str, enum.Enum):
    NONE = "none"
    DROP = "drop"
    STS = "sts"
    SR = "sr"
    TL = "tl"

    @classmethod
    def parse(cls, value) -> "ViewStrategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown view strategy {value!r}; choose from {[s.value for s in cls]}") from None


@dataclass
class ViewBatch:
    anchors: list
    views: list
    negatives: list
    dropout_views: bool = False
    repeats: int = 1  # anchors/negatives are ``repeats`` stacked copies of the batch

    def __post_init__(self):
        if not (len(self.anchors) == len(self.views) == len(self.negatives)):
            raise ValueError("anchors, views and negatives must be aligned")

    def __len__(self) -> int:
        return len(self.anchors)


def sts_view(t: Triple, rng: CounterRNG) -> Triple:
    ctx = list(t.context)
    k = rng.randbelow(len(ctx))
    toks = list(ctx[k])
    rng.shuffle(toks)
    ctx[k] = tuple(toks)
    return Triple(tuple(ctx), t.response, t.label)


def sr_view(t: Triple, rng: CounterRNG) -> Triple:
    movable = len(t.context) - 1
    if movable < 2:
        return sts_view(t, rng)
    i = rng.randbelow(movable)
    j = rng.randbelow(movable - 1)
    if j >= i:
        j += 1
    ctx = list(t.context)
    ctx[i], ctx[j] = ctx[j], ctx[i]
    return Triple(tuple(ctx), t.response, t.label)


def make_views(batch: tuple[Sequence[Triple], Sequence[Triple]], strategy, rng: CounterRNG) -> ViewBatch:
    xs, negs = list(batch[0]), list(batch[1])
    if not xs:
        raise ValueError("cannot build views for an empty batch")
    if len(xs) != len(negs):
        raise ValueError(f"batch has {len(xs)} anchors but {len(negs)} negatives")
    strategy = ViewStrategy.parse(strategy)
    if strategy is ViewStrategy.NONE:
        return ViewBatch(xs, list(xs), negs)
    if strategy is ViewStrategy.DROP:
        return ViewBatch(xs, list(xs), negs, dropout_views=True)
    if strategy is ViewStrategy.STS:
        return ViewBatch(xs, [sts_view(t, rng) for t in xs], negs)
    if strategy is ViewStrategy.SR:
        return ViewBatch(xs, [sr_view(t, rng) for t in xs], negs)
    sts = [sts_view(t, rng) for t in xs]
    sr = [sr_view(t, rng) for t in xs]
    return ViewBatch(xs + xs, sts + sr, negs + negs, repeats=2)
