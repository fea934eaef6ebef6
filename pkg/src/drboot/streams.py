"""Deterministic random-number streams for replicated computations.

Every randomized operation in the package draws from a stream addressed by
(master seed, path of small integers). A path identifies one replicate of
one operation, e.g. ``(CELL, replicate, WILD_RADEMACHER)``. Streams with
different addresses are statistically independent, and the draw sequence
for an address never depends on execution order or on how work is split
across processes. That is what makes parallel and serial runs of the
simulation harness byte-identical.

Implementation: the path is hashed into a 128-bit Philox key through
``numpy.random.SeedSequence``; per-replicate streams then reuse the hashed
key with the replicate index folded into its low word, which costs one
bit-generator construction instead of one hash per replicate. Philox is
counter based, so constructing a generator at a key is O(1).
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

# Fixed tags for the operations that consume substreams. Values are
# arbitrary but frozen: changing them changes every downstream draw.
TAG_DATA = 1
TAG_WILD_RADEMACHER = 2
TAG_WILD_EXPONENTIAL = 3
TAG_RESAMPLE = 4
TAG_TRUTH = 5
TAG_FIXTURE = 6

_WORD = np.uint64(0xFFFFFFFFFFFFFFFF)


def key_pair(master_seed: int, *path: int) -> tuple[int, int]:
    """Hash (master seed, path) into a 128-bit key, returned as two words."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(path))
    k0, k1 = ss.generate_state(2, np.uint64)
    return int(k0), int(k1)


def rng_at(key: tuple[int, int], counter: int = 0) -> np.random.Generator:
    """Generator for replicate ``counter`` of the stream family ``key``."""
    k0, k1 = key
    folded = np.uint64((k1 + counter) & int(_WORD))
    return np.random.Generator(np.random.Philox(key=[np.uint64(k0), folded]))


def substream(master_seed: int, *path: int) -> np.random.Generator:
    """One-off generator for the given address."""
    return rng_at(key_pair(master_seed, *path))


def replicate_rngs(master_seed: int, *path: int, count: int) -> Iterator[np.random.Generator]:
    """Generators for replicates 0..count-1 of one operation, lazily."""
    key = key_pair(master_seed, *path)
    for r in range(count):
        yield rng_at(key, r)
