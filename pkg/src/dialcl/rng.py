"""Counter-based random numbers and the seed tree.

Every random decision in the toolkit flows from :class:`CounterRNG`, a
SplitMix64 generator run in counter mode: output ``i`` (0-based) is
``mix64(key + (i + 1) * GOLDEN)`` in 64-bit wrapping arithmetic.  The
state is just ``(key, counter)``, so a stream can be saved, restored and
jumped without replaying it, and vectorised draws are bit-identical to
scalar ones.

Stream keys come from :class:`SeedTree`, which hashes
``(master, name, epoch, step, index)`` with BLAKE2b into 64 bits.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

STREAMS = ("data-shuffle", "augmentation", "dropout", "init", "posttrain-masking")


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class CounterRNG:
    """SplitMix64 in counter mode.

    >>> hex(CounterRNG(0).next_u64())
    '0xe220a8397b1dcdaf'
    """

    __slots__ = ("key", "counter")

    def __init__(self, key: int, counter: int = 0):
        self.key = int(key) & MASK64
        self.counter = int(counter)

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.key + self.counter * GOLDEN)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError(f"randbelow needs n > 0, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, seq: list) -> None:
        """Fisher-Yates shuffle in place."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def u64_array(self, n: int) -> np.ndarray:
        counters = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + counters * np.uint64(GOLDEN)
            out = _mix64_array(z)
        self.counter += n
        return out

    def random_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        bits = self.u64_array(n) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)

    def uniform_array(self, shape, low: float, high: float) -> np.ndarray:
        return low + (high - low) * self.random_array(shape)

    def getstate(self) -> tuple[int, int]:
        return self.key, self.counter

    def setstate(self, state: tuple[int, int]) -> None:
        self.key, self.counter = int(state[0]), int(state[1])


def hash64(*parts) -> int:
    """Platform-independent 64-bit hash of ints and strings."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(raw)) + raw)
        else:
            h.update(b"i" + struct.pack("<q", int(part)))
    return int.from_bytes(h.digest(), "little")


class SeedTree:
    """Derives independent streams from one master seed."""

    def __init__(self, master: int):
        self.master = int(master)

    def seed(self, name: str, epoch: int = 0, step: int = 0, index: int = 0) -> int:
        if name not in STREAMS:
            raise KeyError(f"unknown stream {name!r}; expected one of {STREAMS}")
        return hash64(self.master, name, epoch, step, index)

    def rng(self, name: str, epoch: int = 0, step: int = 0, index: int = 0) -> CounterRNG:
        return CounterRNG(self.seed(name, epoch, step, index))
