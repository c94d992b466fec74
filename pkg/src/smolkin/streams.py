"""Reproducible random streams for parallel-safe simulation.

Every random draw in the package comes from a Philox counter-based
generator keyed by a 64-bit seed plus an integer path (for example
``(seed, step_index, substream)``).  Streams derived from distinct paths
are statistically independent, and a draw never depends on scheduling
order, so identical (config, seed) pairs reproduce identical runs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream"]

# Fixed tags for the per-step substreams of the particle simulator.
MOVE, PAIRS, ORDER, SIDE = 1, 2, 3, 4


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return a generator keyed by ``(seed, *path)``.

    ``seed`` is a 64-bit unsigned integer; ``path`` entries are small
    non-negative integers identifying the consumer (step index,
    substream tag, ...).
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return np.random.Generator(np.random.Philox(ss))
