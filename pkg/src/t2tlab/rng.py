"""Seeded random streams.

A stream is identified by (seed, stream id); identical identifiers give
identical draw sequences on every platform (numpy's SeedSequence/PCG64
guarantee). Derived streams (`child`) are used to give every example,
dropout site, or task its own independent sequence without coupling to
draw order elsewhere.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Stateful random stream keyed by (seed, stream path)."""

    def __init__(self, seed: int, stream: int | tuple[int, ...] = 0):
        if isinstance(stream, int):
            stream = (stream,)
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.stream))
        )

    def child(self, stream_id: int) -> "Rng":
        """Fresh independent stream; does not disturb this stream's state."""
        return Rng(self.seed, self.stream + (int(stream_id),))

    # Thin delegation so corruption/mixing code can be driven by a fake
    # scripted object with the same surface in tests.
    def random(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None, scale=1.0):
        return self._gen.normal(0.0, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n, size=None, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n):
        return self._gen.permutation(n)

    def shuffle(self, seq) -> None:
        self._gen.shuffle(seq)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"
