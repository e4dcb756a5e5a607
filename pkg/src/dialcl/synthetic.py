"""Template dialogues with a known answer, for end-to-end checks.

Each dialogue talks about one topic: its last context utterance carries the
topic word.  The correct response repeats that topic word; the hard
negative names a different topic and copies a filler word from the context,
so surface overlap alone points the wrong way.  Positive and negative lines
are written in random order within each context block.
"""
from __future__ import annotations

from .corpus import Dataset, Triple
from .rng import CounterRNG


def topic_word(k: int) -> str:
    return f"topic{k}"


def filler_word(k: int) -> str:
    return f"w{k}"


def _utterance(rng: CounterRNG, n_fillers: int, lo: int, hi: int) -> list:
    return [filler_word(rng.randbelow(n_fillers)) for _ in range(lo + rng.randbelow(hi - lo + 1))]


def make_dialogue(rng: CounterRNG, n_topics: int = 2, n_fillers: int = 60):
    """One ``(positive, hard_negative)`` pair sharing a context."""
    topic = rng.randbelow(n_topics)
    other = rng.randbelow(n_topics - 1)
    if other >= topic:
        other += 1
    n_utts = 2 + rng.randbelow(3)
    context = [_utterance(rng, n_fillers, 3, 5) for _ in range(n_utts)]
    distractor = context[rng.randbelow(n_utts)][0]
    last = context[-1]
    last.insert(rng.randbelow(len(last) + 1), topic_word(topic))

    pos = _utterance(rng, n_fillers, 2, 4)
    pos.insert(rng.randbelow(len(pos) + 1), topic_word(topic))
    neg = _utterance(rng, n_fillers, 1, 3)
    neg.insert(rng.randbelow(len(neg) + 1), distractor)
    neg.insert(rng.randbelow(len(neg) + 1), topic_word(other))
    return Triple.of(context, pos, 1), Triple.of(context, neg, 0)


def make_corpus(n_dialogues: int = 5000, seed: int = 0, dev_fraction: float = 0.2,
                n_topics: int = 2, n_fillers: int = 60) -> tuple[Dataset, Dataset]:
    """Train and dev splits; every context appears once with one positive and one negative."""
    rng = CounterRNG(seed)
    n_dev = int(round(n_dialogues * dev_fraction))
    train, dev = [], []
    for i in range(n_dialogues):
        pos, neg = make_dialogue(rng, n_topics, n_fillers)
        block = [pos, neg] if rng.random() < 0.5 else [neg, pos]
        (dev if i < n_dev else train).extend(block)
    return Dataset(train, "train"), Dataset(dev, "dev")
