"""Deterministic random substreams.

Every stream is addressed by ``(seed, *key)``; numpy's ``SeedSequence`` does the
splitting and a stdlib Mersenne Twister does the drawing (scalar draws from
``random.Random`` are far cheaper than from a numpy ``Generator``).  Streams for
``(seed, stage, particle)`` therefore do not depend on how work is scheduled.
"""
from __future__ import annotations

import random

import numpy as np


class RngStream(random.Random):
    """A ``random.Random`` seeded from ``SeedSequence(seed, spawn_key=key)``."""

    def __new__(cls, seed=None, key=()):
        # the C base class rejects a second positional argument
        return super().__new__(cls)

    def __init__(self, seed: int | None = None, key: tuple[int, ...] = ()):
        ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
        self.entropy = ss.entropy
        self.key = tuple(int(k) for k in key)
        state = ss.generate_state(4, dtype=np.uint32)
        super().__init__(int.from_bytes(state.tobytes(), "little"))

    def spawn(self, *key: int) -> "RngStream":
        """Child stream; deterministic given this stream's seed and key."""
        return RngStream(self.entropy, self.key + tuple(key))

    def generator(self) -> np.random.Generator:
        """A numpy Generator on the same address (for vectorised draws)."""
        return np.random.default_rng(np.random.SeedSequence(self.entropy, spawn_key=self.key + (2**31 - 1,)))

    def below(self, k: int) -> int:
        """Uniform integer in ``[0, k)``."""
        return int(self.random() * k)


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngStream(None if rng is None else int(rng))
    raise TypeError(f"cannot make an RngStream from {type(rng).__name__}")
