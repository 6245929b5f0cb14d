import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_rng(seed, name, *index):
    """Independent generator for the operation `name` under a root seed.

    Streams are keyed by a stable hash of the name (not Python's salted
    ``hash``) plus optional integer indices, so draws made by one operation
    never shift the draws of another.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(key, *map(int, index)))
    return np.random.default_rng(ss)


def derive_seed(seed, name, *index):
    return int(derive_rng(seed, name, *index).integers(0, 2**63 - 1))
