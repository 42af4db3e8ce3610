"""Named, reproducible random streams derived from one integer seed."""

import zlib

import numpy as np


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *keys)``.

    Streams are stable across processes: the name is hashed with CRC32, not
    Python's salted ``hash``.
    """
    spawn_key = (zlib.crc32(name.encode()),) + tuple(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))
