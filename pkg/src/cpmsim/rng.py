"""Named deterministic random streams.

Every consumer of randomness gets its own stream keyed by
(scenario seed, owner, stream name), so adding or removing a participant
never perturbs anyone else's draws. Message-level fault decisions use a
stateless hash so they are independent of routing order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _digest(*parts) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return h.digest()


def stream(seed: int, *names) -> np.random.Generator:
    """Deterministic generator for the stream (seed, *names)."""
    d = _digest(seed, *names)
    words = [int.from_bytes(d[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def unit_hash(seed: int, *parts) -> float:
    """Stateless uniform draw in [0, 1) keyed by (seed, *parts)."""
    d = _digest(seed, *parts)
    return int.from_bytes(d[:8], "little") / 2**64


def int_hash(seed: int, bound: int, *parts) -> int:
    """Stateless uniform integer in [0, bound)."""
    if bound <= 1:
        return 0
    d = _digest(seed, *parts)
    return int.from_bytes(d[8:16], "little") % bound
