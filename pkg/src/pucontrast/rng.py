"""Seeded, splittable random streams.

All randomness derives from one integer seed. Child streams are addressed by
string keys, so adding a new consumer never shifts the draws of existing ones.
"""

import zlib

import numpy as np

RNG_ALGORITHM = "numpy.PCG64+SeedSequence/crc32-keys"


def _key_ints(keys):
    out = []
    for key in keys:
        if isinstance(key, (int, np.integer)):
            out.append(int(key) & 0xFFFFFFFF)
        else:
            out.append(zlib.crc32(str(key).encode("utf-8")))
    return tuple(out)


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for the stream ``keys`` under ``seed``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_key_ints(keys))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *keys) -> int:
    """A derived 63-bit integer seed, for configs that store seeds rather than generators."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_key_ints(keys))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
