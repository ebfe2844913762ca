"""Splittable seeding: one 64-bit root seed, named child streams.

Each consumer asks for a stream by name, so adding or reordering consumers
never perturbs the numbers another consumer sees.
"""

import zlib

import numpy as np


def _key(name):
    return zlib.crc32(name.encode("utf-8"))


def stream(seed, *names):
    """Return a Philox-backed ``np.random.Generator`` for ``(seed, *names)``.

    ``names`` may mix strings and non-negative ints, e.g.
    ``stream(7, "synth", "normal", 12)``.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = tuple(_key(n) if isinstance(n, str) else int(n) for n in names)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
