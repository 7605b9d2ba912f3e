"""Deterministic, order-independent random streams.

Every parallel task draws from ``stream(seed, *key)``; the key names the task
(e.g. ``("bin", sent, proj, b)``) so results do not depend on scheduling or
thread count.
"""

import zlib

import numpy as np


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed: int, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_int(k) for k in key))
    return np.random.default_rng(ss)
