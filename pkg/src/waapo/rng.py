"""Deterministic stream-split random number generation.

Every random draw in the package flows through a Philox4x64 counter-based
generator keyed by ``(seed, stream)``: the 128-bit Philox key is
``seed * 2**64 + stream``. Philox guarantees that distinct keys yield
independent streams, so a single 64-bit run seed can deterministically feed
any number of purposes (initial-state synthesis, target synthesis, ensemble
members, ...) without overlap, on any platform, in any execution order.

Stream ids below are part of the on-disk reproducibility contract: changing
them changes every seeded artifact.
"""

from __future__ import annotations

import numpy as np

STREAM_COUPLING = 0
STREAM_INITIAL = 1
STREAM_TARGET = 2
STREAM_PMRG = 3
STREAM_GRADCHECK = 4
ENSEMBLE_STREAM_BASE = 2**32  # ensemble member m uses stream BASE + m


def philox_stream(seed: int, stream: int) -> np.random.Generator:
    """Return the generator for one (seed, stream) pair."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if not 0 <= int(stream) < 2**64:
        raise ValueError(f"stream must be an unsigned 64-bit integer, got {stream!r}")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) + int(stream)))
