"""Seeded random-number streams.

All randomness flows from one top-level integer seed through named
sub-streams, so every pipeline stage is reproducible in isolation and
parallel workers never share generator state.
"""

import zlib

import numpy as np


def substream(seed, *path):
    """Generator for the sub-stream identified by (seed, path).

    Path components may be ints (e.g. record index) or short strings
    (e.g. "dataset"); strings are hashed with crc32 so the derivation is
    stable across runs and platforms.
    """
    key = tuple(
        zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in path
    )
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def complex_normal(rng, shape):
    """i.i.d. CN(0,1) samples: unit total variance split between Re and Im."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
