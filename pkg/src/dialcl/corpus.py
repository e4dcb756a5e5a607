"""Dialogue corpora: TSV parsing, vocabulary, encoding, hard-negative pairing, batching.

The on-disk format is the label-first TSV shared by the Ubuntu, Douban and
E-commerce response-selection corpora::

    label \\t utterance_1 \\t ... \\t utterance_l \\t response

with space-separated tokens inside each field.
"""
from __future__ import annotations

import gzip
import hashlib
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .rng import CounterRNG

log = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
SPECIAL_IDS = frozenset((PAD, CLS, SEP, MASK))

Utterance = tuple  # tuple[str, ...]


class CorpusError(ValueError):
    """Malformed corpus input."""


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass
class Diagnostics:
    """Counters and messages collected while processing data."""

    counts: Counter = field(default_factory=Counter)
    messages: list = field(default_factory=list)

    def add(self, kind: str, message: str | None = None, n: int = 1) -> None:
        self.counts[kind] += n
        if message is not None:
            self.messages.append(f"{kind}: {message}")
            log.warning("%s: %s", kind, message)

    def lines(self) -> list[str]:
        out = [f"count\t{k}\t{v}" for k, v in sorted(self.counts.items())]
        out.extend(f"note\t{m}" for m in self.messages)
        return out

    def write(self, path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.lines()), encoding="utf-8")


@dataclass(frozen=True)
class Triple:
    context: tuple  # tuple of Utterance
    response: tuple
    label: int

    def __post_init__(self):
        if not self.context:
            raise CorpusError("context must hold at least one utterance")
        if self.label not in (0, 1):
            raise CorpusError(f"label must be 0 or 1, got {self.label!r}")

    @classmethod
    def of(cls, context: Iterable[Iterable[str]], response: Iterable[str], label: int) -> "Triple":
        return cls(tuple(tuple(u) for u in context), tuple(response), int(label))


@dataclass(frozen=True)
class PairedExample:
    positive: Triple
    hard_negative: Triple


@dataclass
class Dataset:
    examples: list
    split: str = "train"

    @property
    def n_pos(self) -> int:
        return sum(t.label for t in self.examples)

    @property
    def n_neg(self) -> int:
        return len(self.examples) - self.n_pos

    @property
    def pos_neg_ratio(self) -> Fraction | None:
        """Positives over negatives; None when there are no negatives."""
        return Fraction(self.n_pos, self.n_neg) if self.n_neg else None

    def ratio_text(self) -> str:
        """Ratio written as ``1:x`` with x = negatives per positive."""
        if not self.n_pos:
            return "0:1"
        x = self.n_neg / self.n_pos
        return f"1:{x:.0f}" if x == int(x) else f"1:{x:.2f}"

    def __len__(self) -> int:
        return len(self.examples)


def parse_tsv_line(line: str, lineno: int | None = None) -> Triple:
    where = f"line {lineno}" if lineno is not None else "line"
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) < 3:
        raise CorpusError(f"{where}: expected label, context and response fields, got {len(fields)} field(s)")
    label = fields[0].strip()
    if label not in ("0", "1"):
        raise CorpusError(f"{where}: label must be '0' or '1', got {label!r}")
    utts = []
    for i, f in enumerate(fields[1:], start=2):
        toks = f.split()
        if not toks:
            raise CorpusError(f"{where}: field {i} is an empty utterance")
        utts.append(tuple(toks))
    return Triple(tuple(utts[:-1]), utts[-1], int(label))


def format_tsv_line(t: Triple) -> str:
    return "\t".join([str(t.label), *(" ".join(u) for u in t.context), " ".join(t.response)])


def open_text(path) -> io.TextIOBase:
    """Open a UTF-8 text file, transparently gunzipping by magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def iter_tsv(path) -> Iterator[Triple]:
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield parse_tsv_line(line, lineno)


def read_dataset(path, split: str = "train") -> Dataset:
    return Dataset(list(iter_tsv(path)), split)


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in ds.examples:
            fh.write(format_tsv_line(t) + "\n")


class Vocab:
    """Token/id bijection with the five reserved tokens at ids 0..4."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:5]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, UNK)

    def ids(self, toks: Iterable[str]) -> list[int]:
        get = self.stoi.get
        return [get(t, UNK) for t in toks]

    def text(self) -> str:
        return "".join(t + "\n" for t in self.itos)

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:5]) != RESERVED:
            raise CorpusError(f"{path}: vocabulary must start with the reserved tokens {RESERVED}")
        return cls(lines)


def count_tokens(examples: Iterable[Triple]) -> Counter:
    counts: Counter = Counter()
    for t in examples:
        for u in t.context:
            counts.update(u)
        counts.update(t.response)
    return counts


def build_vocab(dataset: Dataset | Iterable[Triple], max_size: int, min_freq: int = 1) -> Vocab:
    if max_size <= 5:
        raise ConfigError(f"max_size must exceed the 5 reserved tokens, got {max_size}")
    examples = dataset.examples if isinstance(dataset, Dataset) else dataset
    counts = count_tokens(examples)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((tok for tok, c in counts.items() if c >= min_freq), key=lambda tok: (-counts[tok], tok))
    return Vocab(list(RESERVED) + kept[: max_size - 5])


def encode_triple(t: Triple, vocab: Vocab, max_len: int, diag: Diagnostics | None = None):
    """Lay out ``[CLS] u1 [SEP] ... ul [SEP] r [SEP]`` padded to ``max_len``.

    Oldest utterances are dropped first; if the newest one still does not
    fit it loses tokens from its front.  A response too long even with an
    empty context is cut at its tail.  Returns ``(ids, true_len)``.
    """
    if max_len < 3:
        raise ConfigError(f"max_len must be >= 3, got {max_len}")
    resp = vocab.ids(t.response)
    ctx = [vocab.ids(u) for u in t.context]

    budget = max_len - 3 - len(resp)  # CLS + context SEP + response SEP
    if budget < 0:
        if diag is not None:
            diag.add("response_truncated", f"response of {len(resp)} tokens cut to {max_len - 3}")
        else:
            log.warning("response of %d tokens cut to %d", len(resp), max_len - 3)
        resp = resp[: max_len - 3]
        ctx_ids: list[int] = []
    else:
        # each utterance costs its tokens plus a SEP; the last SEP is already budgeted
        start = 0
        total = sum(len(u) + 1 for u in ctx) - 1
        while total > budget and start < len(ctx) - 1:
            total -= len(ctx[start]) + 1
            start += 1
        kept = ctx[start:]
        if total > budget:
            kept = [kept[-1][len(kept[-1]) - budget :] if budget > 0 else []]
        ctx_ids = []
        for i, u in enumerate(kept):
            ctx_ids.extend(u)
            if i < len(kept) - 1:
                ctx_ids.append(SEP)
    seq = [CLS, *ctx_ids, SEP, *resp, SEP]
    true_len = len(seq)
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[:true_len] = seq
    return ids, true_len


def encode_many(triples: Sequence[Triple], vocab: Vocab, max_len: int, diag: Diagnostics | None = None):
    ids = np.full((len(triples), max_len), PAD, dtype=np.int64)
    lengths = np.empty(len(triples), dtype=np.int64)
    for i, t in enumerate(triples):
        ids[i], lengths[i] = encode_triple(t, vocab, max_len, diag)
    return ids, lengths


def pair_hard_negatives(dataset: Dataset | Sequence[Triple], diag: Diagnostics | None = None) -> list[PairedExample]:
    """Join each positive with the first negative sharing its exact context."""
    diag = diag if diag is not None else Diagnostics()
    examples = dataset.examples if isinstance(dataset, Dataset) else list(dataset)
    negatives: dict = {}
    for t in examples:
        if t.label == 0:
            negatives.setdefault(t.context, []).append(t)
    for ctx, negs in negatives.items():
        if len(negs) > 1:
            diag.add("extra_negatives", n=len(negs) - 1)
    pairs = []
    for idx, t in enumerate(examples):
        if t.label != 1:
            continue
        negs = negatives.get(t.context)
        if not negs:
            diag.add("dropped_positive", f"example {idx} has no negative with the same context")
            continue
        pairs.append(PairedExample(t, negs[0]))
    if not pairs:
        raise CorpusError("no positive example could be paired with a hard negative")
    return pairs


def make_batches(pairs: Sequence[PairedExample], batch_size: int, seed: int, diag: Diagnostics | None = None):
    """Shuffle pairs by ``seed`` and cut them into ``(X, X_neg)`` batches.

    A trailing batch is kept only if it holds at least two pairs.
    """
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2 for in-batch negatives, got {batch_size}")
    order = list(range(len(pairs)))
    CounterRNG(seed).shuffle(order)
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        if len(chunk) < 2:
            msg = f"dropped trailing batch of {len(chunk)} pair(s)"
            if diag is not None:
                diag.add("short_batch_dropped", msg)
            else:
                log.info(msg)
            continue
        batches.append(([pairs[i].positive for i in chunk], [pairs[i].hard_negative for i in chunk]))
    return batches


def context_groups(examples: Sequence[Triple], group_size: int | None = None) -> list[list[int]]:
    """Split evaluation examples into candidate groups.

    Without ``group_size`` a group is a maximal run of consecutive lines
    with the same context.
    """
    if group_size is not None:
        if group_size < 1:
            raise ConfigError("group_size must be >= 1")
        if len(examples) % group_size:
            raise CorpusError(f"{len(examples)} examples do not split into groups of {group_size}")
        return [list(range(s, s + group_size)) for s in range(0, len(examples), group_size)]
    groups: list[list[int]] = []
    prev = None
    for i, t in enumerate(examples):
        if groups and t.context == prev:
            groups[-1].append(i)
        else:
            groups.append([i])
        prev = t.context
    return groups
