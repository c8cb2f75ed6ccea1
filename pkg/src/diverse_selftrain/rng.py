"""Named, counter-based random streams.

Every randomized step draws from its own Philox stream keyed by
``(master seed, purpose label, index)``.  Adding a new step with a new label
never shifts the numbers seen by existing steps.
"""
import hashlib

import numpy as np


def stream_key(seed, label, index=0):
    digest = hashlib.blake2b(
        f"{int(seed)}|{label}|{int(index)}".encode(), digest_size=16
    ).digest()
    return np.frombuffer(digest, dtype=np.uint64).copy()


def stream(seed, label, index=0):
    """Return a fresh ``numpy.random.Generator`` for ``(seed, label, index)``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, label, index)))
