"""Deterministic RNG derivation.

Every source of randomness in the toolkit draws from a named stream derived
from a single master seed, so runs are reproducible from one integer.
"""

from __future__ import annotations

import numpy as np
import torch

_PURPOSE_SPACE = 2**31 - 1


def _spawn_key(path: tuple[int | str, ...]) -> tuple[int, ...]:
    key = []
    for part in path:
        if isinstance(part, int):
            key.append(part & 0xFFFFFFFF)
        else:
            # Stable string -> int mapping; hash() is salted per process.
            acc = 0
            for ch in part.encode("utf-8"):
                acc = (acc * 131 + ch) % _PURPOSE_SPACE
            key.append(acc)
    return tuple(key)


def derive_seed(master: int, *path: int | str) -> int:
    """Derive a 63-bit child seed from (master, path); stable across platforms."""
    seq = np.random.SeedSequence(master, spawn_key=_spawn_key(path))
    return int(seq.generate_state(1, np.uint64)[0] >> 1)


def generator(master: int, *path: int | str) -> np.random.Generator:
    seq = np.random.SeedSequence(master, spawn_key=_spawn_key(path))
    return np.random.Generator(np.random.PCG64(seq))


def torch_generator(master: int, *path: int | str) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(derive_seed(master, *path))
    return g
