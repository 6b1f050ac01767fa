"""Deterministic fan-out of the single run seed into named sub-streams.

Each consumer of randomness (train/query split, code and projection init,
anchor selection) gets its own stream derived from the run seed plus a
fixed tag.  Changing one consumer's draw count therefore never perturbs
the others, and any stream can be reproduced in isolation.
"""

import numpy as np

from .errors import UsageError

_STREAM_TAGS = {
    "split": 1,
    "init": 2,
    "anchors": 3,
}


def named_rng(seed: int, stream: str, index: int | None = None) -> np.random.Generator:
    """Return an independent Generator for one named consumer of the seed.

    `index` optionally splits a stream further (e.g. one init stream per
    projection shape).  Same (seed, stream, index) always yields the
    same Generator.
    """
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise UsageError(f"seed must be a non-negative integer, got {seed!r}")
    try:
        tag = _STREAM_TAGS[stream]
    except KeyError:
        raise UsageError(f"unknown seed stream {stream!r}") from None
    entropy = [int(seed), tag]
    if index is not None:
        entropy.append(int(index))
    return np.random.default_rng(np.random.SeedSequence(entropy))
