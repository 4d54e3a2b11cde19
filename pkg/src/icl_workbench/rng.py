"""Named, splittable random streams derived from one root seed."""

import zlib

import numpy as np


def stream(seed, *names):
    """Return a Generator for the stream ``names`` under root ``seed``.

    The same (seed, names) pair always yields the same stream, and distinct
    names give statistically independent streams, so parallel workers can
    each derive their own without coordination.
    """
    key = tuple(zlib.crc32(str(n).encode()) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def child_seed(seed, *names):
    """Integer seed for a sub-run, derived deterministically from ``seed``."""
    return int(stream(seed, *names).integers(0, 2**31 - 1))
