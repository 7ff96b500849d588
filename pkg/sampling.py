"""
Deterministic seeded randomness for epoch sampling.

Stream contract (pinned; changing it is a breaking change):
    * each stream is numpy's PCG64 bit generator seeded with
      ``SeedSequence(seed, spawn_key=key)``; only its raw 64-bit outputs are consumed;
    * bounded draws on ``{0, …, n−1}`` reject raw values ``≥ 2⁶⁴ − (2⁶⁴ mod n)`` and
      return ``raw mod n``, so every value is exactly equally likely;
    * permutations are Fisher–Yates shuffles of ``0..n−1``: for ``i = n−1 … 1`` swap
      position ``i`` with a bounded draw on ``{0, …, i}``.
numpy guarantees PCG64 and SeedSequence output stability, so traces reproduce across
platforms and numpy releases.
"""

import logging
from typing import Dict, Sequence, Tuple

import numpy as np

from errors import InvalidInputError

logger = logging.getLogger(__name__)

_TWO_64 = 1 << 64


class RngStream:
    """Single-owner pseudo-random stream identified by a seed and a spawn key."""

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        if seed < 0:
            raise InvalidInputError(f"Seed must be a nonnegative integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._bits = np.random.PCG64(sequence)

    @classmethod
    def for_run(cls, base_seed: int, run_index: int) -> "RngStream":
        """Stream owned by one run of a multi-seed experiment."""
        return cls(base_seed, (run_index,))

    def child(self, index: int) -> "RngStream":
        """Independent sub-stream, e.g. one per replay trial."""
        return RngStream(self.seed, self.key + (index,))

    def next_raw(self) -> int:
        return int(self._bits.random_raw())

    def bounded(self, n: int) -> int:
        """Unbiased draw from {0, …, n−1} by rejection sampling."""
        if n < 1:
            raise InvalidInputError(f"Bounded draw needs n >= 1, got {n}")
        if n == 1:
            return 0
        limit = _TWO_64 - (_TWO_64 % n)
        while True:
            raw = self.next_raw()
            if raw < limit:
                return raw % n

    def __repr__(self) -> str:
        return f"<RngStream seed={self.seed} key={self.key}>"


def random_permutation(rng: RngStream, n: int) -> np.ndarray:
    """Uniform random permutation of 0..n−1 (Fisher–Yates)."""
    if n < 1:
        raise InvalidInputError(f"Permutation size must be at least 1, got {n}")
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.bounded(i + 1)
        order[i], order[j] = order[j], order[i]
    return np.asarray(order, dtype=np.int64)


def uniform_index(rng: RngStream, n: int) -> int:
    """Single index drawn uniformly from {0, …, n−1}."""
    if n < 1:
        raise InvalidInputError(f"Index range must be at least 1, got {n}")
    return rng.bounded(n)


def uniform_indices(rng: RngStream, n: int, count: int) -> np.ndarray:
    """``count`` independent uniform draws (sampling with replacement)."""
    return np.asarray([uniform_index(rng, n) for _ in range(count)], dtype=np.int64)


def is_permutation(order: Sequence[int], n: int) -> bool:
    order = np.asarray(order)
    return order.shape == (n,) and np.array_equal(np.sort(order), np.arange(n))


def conditional_next_distribution(prefix: Sequence[int], n: int) -> Dict[int, float]:
    """
    Law of the next reshuffled index given the indices already used this epoch.

    Every unused index has probability 1/(n − i), used ones 0, where i = len(prefix).

    Raises:
        InvalidInputError: for duplicate or out-of-range prefix entries, or a full prefix
    """
    used = [int(k) for k in prefix]
    if len(set(used)) != len(used):
        raise InvalidInputError(f"Prefix {used} contains duplicate indices")
    if any(k < 0 or k >= n for k in used):
        raise InvalidInputError(f"Prefix {used} has indices outside 0..{n - 1}")
    if len(used) >= n:
        raise InvalidInputError(f"Prefix of length {len(used)} leaves no index of {n} unused")
    remaining = n - len(used)
    used_set = set(used)
    return {k: (0.0 if k in used_set else 1.0 / remaining) for k in range(n)}
