"""Seeded random streams.

All randomness goes through numpy's PCG64 bit generator. Independent streams
are derived from a root seed plus an integer path (``SeedSequence`` spawn
keys), so a stream for e.g. ``(epoch, batch, sample)`` does not depend on how
many numbers other streams have consumed. Serial and parallel runs therefore
produce identical bytes.
"""

import numpy as np

# Stream-path prefixes; keeping them distinct stops unrelated streams from colliding.
LABELS = 0
SAMPLE = 1
AUGMENT = 2
DROPOUT = 3
INIT = 4
SHUFFLE = 5
FOLDS = 6


def stream(seed, *path):
    """Return a ``numpy.random.Generator`` for ``seed`` and an integer path."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *path):
    """Collapse ``(seed, *path)`` to a single 63-bit integer seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
