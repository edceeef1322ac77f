"""Deterministic random streams.

Every stochastic routine draws from a Philox counter-based generator keyed
by (seed, stream tag, index...).  Philox is a documented 64-bit counter
scheme with a platform-independent output stream, so any result is
bit-reproducible from the seed alone, no matter what else the program has
sampled.
"""

import numpy as np

STREAM_DATA = 1
STREAM_INIT = 2
STREAM_SHUFFLE = 3
STREAM_VAT = 4


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the sub-stream identified by (seed, *stream)."""
    key = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
