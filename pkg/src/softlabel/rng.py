"""Seeded pseudo-randomness.

Splits use SplitMix64 directly (Fisher-Yates with rejection-sampled bounded
integers), so a split is reproducible from the seed alone in any language.
Distribution sampling (Gaussian, Beta, Poisson) goes through numpy
generators whose seeds are derived from SplitMix64 output.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def key_hash(key: str) -> int:
    return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")


def derive_seed(seed: int, key: str) -> int:
    """Independent 64-bit substream seed for ``key`` (e.g. an image id)."""
    return SplitMix64((seed & MASK64) ^ key_hash(key)).next_u64()


def substream(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, key))
