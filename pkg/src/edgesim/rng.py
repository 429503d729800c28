"""Named random streams derived from one master seed.

Each consumer (topology, workload, selection, placement, ...) gets its own
stream, so turning one knob never shifts the draws seen by another.
"""
from __future__ import annotations

import random
import zlib

import numpy as np


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_seed_sequence(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(_stream_key(name),))


def derive_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(seed, name))


def derive_pyrandom(seed: int, name: str) -> random.Random:
    """Stdlib generator for hot scalar loops (cheaper per draw than numpy)."""
    state = derive_seed_sequence(seed, name).generate_state(2, dtype=np.uint64)
    return random.Random(int(state[0]) << 64 | int(state[1]))
