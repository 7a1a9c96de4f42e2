"""Counter-based random streams keyed by run coordinates.

Every consumer of randomness derives its generator from the master seed
plus a tuple of integer keys, so streams do not depend on execution order
or on how work is split across processes.
"""

from __future__ import annotations

import hashlib
from typing import Iterable

import numpy as np

# Stream tags keep independent consumers apart even when their other keys match.
TAG_GAME = 1
TAG_INIT = 2
TAG_PROFILE = 3
TAG_QLEARN = 4
TAG_MISC = 5


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and the integer ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def hash_key(parts: Iterable) -> tuple[int, int]:
    """Stable 128-bit hash of a nested tuple of ints/strings, as two ints."""
    h = hashlib.blake2b(repr(tuple(parts)).encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(h[:8], "little"), int.from_bytes(h[8:], "little")


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit seed derived from ``seed`` and ``keys`` (for nested generators)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    a, b = ss.generate_state(2, dtype=np.uint32)
    return (int(a) << 31) ^ int(b)
