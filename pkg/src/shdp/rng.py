"""Seeded random streams.

Every stochastic routine in this package draws from a ``numpy.random.Generator``.
:class:`RngStream` pins down how generators are created so that a run is fully
determined by a 64-bit seed plus a substream index: the same ``(seed, stream_id)``
always yields the same variate sequence, and distinct stream ids give
statistically independent sequences (distinct ``SeedSequence`` spawn keys).

Layered code (per-particle, per-repeat-chunk) derives further independent
generators with ``Generator.spawn``, which is likewise deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Value-like handle for a reproducible random substream."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not (0 <= self.stream_id < 2**64):
            raise ValueError("stream_id must be an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        """Fresh generator; repeated calls restart the identical sequence."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.default_rng(ss)

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)
