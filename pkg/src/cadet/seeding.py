"""Deterministic RNG derivation.

Every random draw in the package flows from one global seed through
named sub-streams, so independent stages (phantom synthesis, view
sampling, training, subset selection) cannot perturb each other and
re-runs are bit-identical.
"""

from __future__ import annotations

import zlib

import numpy as np

_MAX_U32 = 0xFFFFFFFF


def _as_words(parts: tuple) -> list[int]:
    words = []
    for p in parts:
        if isinstance(p, str):
            words.append(zlib.crc32(p.encode("utf-8")) & _MAX_U32)
        elif isinstance(p, (int, np.integer)):
            v = int(p)
            if v < 0:
                raise ValueError(f"seed parts must be non-negative, got {v}")
            # split arbitrarily large ints into 32-bit words
            while True:
                words.append(v & _MAX_U32)
                v >>= 32
                if v == 0:
                    break
        else:
            raise TypeError(f"unsupported seed part {p!r}")
    return words


def seed_sequence(*parts: int | str) -> np.random.SeedSequence:
    """Build a SeedSequence from a mixed tuple of ints and stream names."""
    return np.random.SeedSequence(_as_words(parts))


def rng_for(*parts: int | str) -> np.random.Generator:
    """PCG64 generator for the stream identified by ``parts``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))
