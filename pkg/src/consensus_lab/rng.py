"""Splittable SplitMix64 random streams.

Every random draw in a simulation comes from a :class:`SplitMix64` stream whose
seed is derived from the scenario seed and a key path with :func:`derive_seed`.
Both the generator and the mixing function are the published SplitMix64
constants, so a trace can be reproduced by any implementation that follows
them.

Seed derivation::

    state = seed
    for key in keys:
        k = key                       (int keys)
        k = first 8 bytes of sha256(key) as big-endian int   (str keys)
        state = mix64(state ^ mix64((k + GOLDEN) mod 2**64))
"""
from __future__ import annotations

import hashlib
import random

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 output finalizer (Stafford variant 13)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _key_int(key: int | str) -> int:
    if isinstance(key, bool):
        raise TypeError("boolean keys are ambiguous")
    if isinstance(key, int):
        return key & MASK64
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


def derive_seed(seed: int, *keys: int | str) -> int:
    state = seed & MASK64
    for key in keys:
        state = mix64(state ^ mix64((_key_int(key) + GOLDEN) & MASK64))
    return state


class SplitMix64(random.Random):
    """A :class:`random.Random` driven by SplitMix64.

    Subclassing ``random.Random`` keeps the familiar API (``randrange``,
    ``choice``, ``shuffle``, ``uniform``) while the underlying bit stream is
    the portable SplitMix64 sequence.
    """

    def __init__(self, seed: int = 0) -> None:
        self._state = 0
        super().__init__(seed)

    def seed(self, a=None, version=2) -> None:  # noqa: D102
        if not isinstance(a, int):
            raise TypeError("SplitMix64 needs an integer seed")
        self._state = a & MASK64
        self.gauss_next = None

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN) & MASK64
        return mix64(self._state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def getrandbits(self, k: int) -> int:
        if k < 0:
            raise ValueError("number of bits must be non-negative")
        out = 0
        filled = 0
        while filled < k:
            out = (out << 64) | self.next_u64()
            filled += 64
        return out >> (filled - k)

    def getstate(self):
        return (self._state, self.gauss_next)

    def setstate(self, state) -> None:
        self._state, self.gauss_next = state

    def split(self, *keys: int | str) -> "SplitMix64":
        """Child stream keyed off this stream's current state."""
        return SplitMix64(derive_seed(self._state, *keys))


def stream(seed: int, *keys: int | str) -> SplitMix64:
    return SplitMix64(derive_seed(seed, *keys))
