"""Named, counter-based random substreams.

Every random draw in the package comes from a Philox generator keyed by a
root seed plus a path of names/integers, so results do not depend on how
work is split across processes.
"""

import zlib

import numpy as np

__all__ = ["make_rng", "substream_seed", "seed_sequence"]


def _key_part(part):
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed, *key):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy,
                                      spawn_key=tuple(seed.spawn_key) +
                                      tuple(_key_part(k) for k in key))
    return np.random.SeedSequence(0 if seed is None else int(seed),
                                  spawn_key=tuple(_key_part(k) for k in key))


def make_rng(seed, *key):
    """Philox generator for the substream ``key`` of ``seed``.

    A ready ``Generator`` passed as ``seed`` is returned unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *key)))


def substream_seed(seed, *key):
    """A 32-bit integer seed for the substream ``key`` of ``seed``."""
    return int(seed_sequence(seed, *key).generate_state(1)[0])
