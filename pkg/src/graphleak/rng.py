"""Seeding discipline.

Every random stage draws from its own Philox stream keyed by a tuple of
ints/strings, e.g. ``stream(master_seed, "noise", layer)``. Philox is a
counter-based generator, so a stream depends only on its key and never on
how many numbers other stages consumed. Gaussian draws use numpy's
ziggurat sampler on top of that stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

SeedLike = int | np.random.Generator | tuple


def _check_key(key) -> None:
    if isinstance(key, tuple):
        for k in key:
            _check_key(k)
    elif not isinstance(key, (str, float, int, np.integer, np.floating, np.bool_)) and key is not None:
        # repr of arbitrary objects (generators included) may embed memory addresses
        raise TypeError(f"stream keys must be ints, floats, strings or tuples, got {type(key).__name__}")


def _word(key) -> int:
    _check_key(key)
    if isinstance(key, (bool, np.bool_)):
        key = int(key)
    if isinstance(key, (int, np.integer)):
        k = int(key)
        if 0 <= k < 2**63:
            return k
    digest = hashlib.blake2b(repr(key).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(*keys) -> np.random.Generator:
    """Independent generator for the stage identified by ``keys``."""
    flat = []
    for k in keys:
        if isinstance(k, tuple):
            flat.extend(_word(x) for x in k)
        else:
            flat.append(_word(k))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(flat)))


def as_generator(seed: SeedLike, *keys) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(seed, *keys)
