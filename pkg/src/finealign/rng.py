"""Seeded, splittable randomness.

Every consumer derives its own generator from the run seed plus a path of
string/int keys, e.g. ``derive(seed, "synth", 3)``.  Strings are hashed with
CRC-32 so the mapping is stable across processes and Python versions.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive(seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
