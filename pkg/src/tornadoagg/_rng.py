"""Named random sub-streams derived from a single integer seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "init", "rings", "grouping", "batch", "probes", "split")


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("ascii"))


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for purpose ``name``; stable across runs and platforms."""
    return np.random.default_rng([stream_key(name), int(seed)])


def derive_seed(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(0, 2**31 - 1))
