"""Reproducible counter-based random number streams.

Streams are identified by a (seed, stream_index) pair. Distinct pairs give
statistically independent Philox streams; identical pairs reproduce identical
sequences, independent of how work is partitioned across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Handle for one independent random stream.

    The underlying generator is Philox keyed through a SeedSequence, so
    ``RngStream(seed, i)`` and ``RngStream(seed, j)`` are independent for
    ``i != j`` and each is bit-reproducible.
    """

    seed: int
    stream_index: int = 0

    def __post_init__(self) -> None:
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed,
                                    spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(ss))

    def offset(self, k: int) -> "RngStream":
        """Stream shifted by k indices; used to hand disjoint streams to chunks."""
        return RngStream(self.seed, self.stream_index + k)
