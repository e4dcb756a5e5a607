"""Example generation for domain-adaptive post-training (MLM + NSP).

Each example is built from a random positive triple: join context and
response into one dialogue, optionally cut it to a shorter prefix, sample a
next-utterance target (true next, random utterance from elsewhere, or an
earlier utterance of the same dialogue), encode, and mask tokens BERT-style.
Only the examples are produced here; no model is trained.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .corpus import MASK, SPECIAL_IDS, CorpusError, Diagnostics, Triple, Vocab, encode_triple
from .rng import CounterRNG, SeedTree

NSP_POSITIVE = 0
NSP_RANDOM = 1
NSP_SAME_CONTEXT = 2
NSP_NAMES = ("positive", "random-negative", "same-context-negative")

MASK_RATE = 0.15
MASK_TOKEN_P = 0.8
RANDOM_TOKEN_P = 0.1
IGNORE = -1

RECORD_MAGIC = b"DCLP"
RECORD_VERSION = 1


@dataclass
class PostExample:
    input_ids: np.ndarray
    length: int
    mlm_labels: np.ndarray  # original id where selected, IGNORE elsewhere
    nsp_label: int
    source: int

    def masked_positions(self) -> np.ndarray:
        return np.nonzero(self.mlm_labels != IGNORE)[0]


def cut_dialogue(d: Sequence, rng: CounterRNG) -> list:
    """With probability 1/2 keep a strictly shorter prefix of length >= 2."""
    if len(d) < 2:
        raise CorpusError(f"dialogue of {len(d)} utterance(s) is too short to cut")
    d = list(d)
    if rng.random() < 0.5 and len(d) > 2:
        return d[: 2 + rng.randbelow(len(d) - 2)]
    return d


def sample_nsp(d: Sequence, dialogues: Sequence[Sequence], rng: CounterRNG, source: int | None = None,
               diag: Diagnostics | None = None):
    """Returns ``(context, response, nsp_label)``.

    1/4 positive (the final utterance), 1/2 a random utterance of another
    dialogue, 1/4 a random non-final utterance of ``d`` itself.
    """
    if len(d) < 2:
        raise CorpusError("need at least two utterances for a next-utterance example")
    context = list(d[:-1])
    u = rng.random()
    if u < 0.25:
        return context, d[-1], NSP_POSITIVE
    if u < 0.75:
        others = len(dialogues) - (1 if source is not None else 0)
        if others > 0:
            k = rng.randbelow(others)
            if source is not None and k >= source:
                k += 1
            other = dialogues[k]
            return context, other[rng.randbelow(len(other))], NSP_RANDOM
        if diag is not None:
            diag.add("random_negative_fallback", "corpus has a single dialogue; using a same-context negative")
    return context, d[rng.randbelow(len(d) - 1)], NSP_SAME_CONTEXT


def mask_tokens(ids: np.ndarray, length: int, vocab_size: int, rng: CounterRNG):
    """Select ~15% of the non-special positions (at least one).

    The selected count is ``floor(0.15 n)`` plus one more with probability
    equal to the fractional part, so its expectation is exactly ``0.15 n``
    whenever that is at least 1.  Of the selected positions 80% become MASK,
    10% a random ordinary token different from the original, 10% stay.
    Returns ``(masked_ids, mlm_labels)`` or None if nothing can be selected.
    """
    ids = np.asarray(ids, dtype=np.int64)
    cand = [i for i in range(length) if int(ids[i]) not in SPECIAL_IDS]
    if not cand:
        return None
    n = len(cand)
    exact = MASK_RATE * n
    k = int(exact)
    if rng.random() < exact - k:
        k += 1
    k = min(max(k, 1), n)
    # partial Fisher-Yates: the first k entries are a uniform k-subset
    for i in range(k):
        j = i + rng.randbelow(n - i)
        cand[i], cand[j] = cand[j], cand[i]
    chosen = sorted(cand[:k])
    out = ids.copy()
    labels = np.full_like(ids, IGNORE)
    n_ordinary = vocab_size - 5
    for pos in chosen:
        orig = int(ids[pos])
        labels[pos] = orig
        u = rng.random()
        if u < MASK_TOKEN_P:
            out[pos] = MASK
        elif u < MASK_TOKEN_P + RANDOM_TOKEN_P:
            if n_ordinary >= 2 or (n_ordinary == 1 and orig < 5):
                pool = n_ordinary - (1 if orig >= 5 else 0)
                r = 5 + rng.randbelow(pool)
                if orig >= 5 and r >= orig:
                    r += 1
                out[pos] = r
            else:
                out[pos] = MASK
    return out, labels


def dialogues_of(triples: Sequence[Triple]) -> tuple[list, list]:
    """Positive triples turned into dialogues ``context + [response]``, with their indices."""
    src, dialogues = [], []
    for i, t in enumerate(triples):
        if t.label == 1:
            src.append(i)
            dialogues.append(list(t.context) + [t.response])
    return src, dialogues


def generate_post_training(triples: Sequence[Triple], count: int, seed: int, vocab: Vocab, max_len: int = 64,
                           diag: Diagnostics | None = None) -> Iterator[PostExample]:
    """Yield ``count`` examples; example ``k`` draws only from its own derived stream."""
    diag = diag if diag is not None else Diagnostics()
    if count <= 0:
        return
    src, dialogues = dialogues_of(triples)
    if not dialogues:
        raise CorpusError("corpus has no positive triples to post-train on")
    seeds = SeedTree(seed)
    emitted = 0
    k = 0
    while emitted < count:
        rng = seeds.rng("posttrain-masking", 0, 0, k)
        k += 1
        j = rng.randbelow(len(dialogues))
        d = dialogues[j]
        if len(d) < 2:
            diag.add("short_dialogue_skipped")
            continue
        d_cut = cut_dialogue(d, rng)
        context, response, nsp = sample_nsp(d_cut, dialogues, rng, source=j, diag=diag)
        ids, length = encode_triple(Triple(tuple(context), tuple(response), 1), vocab, max_len, diag)
        masked = mask_tokens(ids, length, len(vocab), rng)
        if masked is None:
            diag.add("no_mask_candidates")
            continue
        out, labels = masked
        emitted += 1
        yield PostExample(out, length, labels, nsp, src[j])


def write_records(examples, fh: BinaryIO) -> int:
    """Length-prefixed binary records; returns the number written.

    File: ``b"DCLP"``, u32 version, then per record u32 byte length and
    payload ``u64 source, u8 nsp, u32 length, u32 width, i32[width] ids,
    i32[width] mlm_labels`` (little-endian).
    """
    fh.write(RECORD_MAGIC + struct.pack("<I", RECORD_VERSION))
    n = 0
    for ex in examples:
        w = len(ex.input_ids)
        payload = (struct.pack("<QBII", ex.source, ex.nsp_label, ex.length, w)
                   + np.asarray(ex.input_ids, dtype="<i4").tobytes()
                   + np.asarray(ex.mlm_labels, dtype="<i4").tobytes())
        fh.write(struct.pack("<I", len(payload)) + payload)
        n += 1
    return n


def read_records(fh: BinaryIO) -> Iterator[PostExample]:
    head = fh.read(8)
    if len(head) < 8 or head[:4] != RECORD_MAGIC:
        raise CorpusError("not a post-training record file")
    (version,) = struct.unpack("<I", head[4:])
    if version != RECORD_VERSION:
        raise CorpusError(f"record format version {version} is not supported (expected {RECORD_VERSION})")
    while True:
        raw = fh.read(4)
        if not raw:
            return
        if len(raw) < 4:
            raise CorpusError("truncated record length")
        (size,) = struct.unpack("<I", raw)
        payload = fh.read(size)
        if len(payload) < size:
            raise CorpusError("truncated record payload")
        source, nsp, length, w = struct.unpack_from("<QBII", payload)
        off = struct.calcsize("<QBII")
        ids = np.frombuffer(payload, dtype="<i4", count=w, offset=off).astype(np.int64)
        labels = np.frombuffer(payload, dtype="<i4", count=w, offset=off + 4 * w).astype(np.int64)
        yield PostExample(ids, length, labels, nsp, source)


def preview(ex: PostExample, vocab: Vocab) -> str:
    """``context || response || nsp_label || masked positions`` on one line."""
    toks = [vocab.itos[i] for i in ex.input_ids[: ex.length]]
    # layout is [CLS] ctx [SEP] resp [SEP]; the response follows the second-to-last SEP
    seps = [i for i, t in enumerate(ex.input_ids[: ex.length]) if t == 3]
    cut = seps[-2] if len(seps) >= 2 else 0
    ctx = " ".join(toks[1:cut])
    resp = " ".join(toks[cut + 1 : ex.length - 1])
    masked = ",".join(f"{p}:{vocab.itos[ex.mlm_labels[p]]}" for p in ex.masked_positions())
    return f"{ctx} || {resp} || {NSP_NAMES[ex.nsp_label]} || {masked}"
