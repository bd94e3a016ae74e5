"""Named random sub-streams derived from a single user seed.

Every random draw in the package goes through :func:`generator`, so a run is
fully determined by ``(seed, stream name, chunk keys)``.  Chunked consumers
derive one generator per chunk, which makes results independent of how the
chunks are distributed over workers.
"""
from __future__ import annotations

import numpy as np

STREAMS = {
    "data": 0,
    "mc": 1,
    "multistart": 2,
    "directions": 3,
    "probes": 4,
    "shuffle": 5,
    "perturbation": 6,
}

#: fixed chunk length for chunked Monte Carlo draws
CHUNK = 1 << 16


def generator(seed: int, stream: str, *keys: int) -> np.random.Generator:
    if stream not in STREAMS:
        raise KeyError(f"unknown random stream {stream!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[stream], *map(int, keys)))
    return np.random.default_rng(ss)


def chunk_sizes(total: int, chunk: int = CHUNK):
    """Yield ``(chunk_index, size)`` pairs covering ``total`` draws."""
    c = 0
    while total > 0:
        size = min(chunk, total)
        yield c, size
        total -= size
        c += 1
