"""Named random substreams derived from one master seed.

``substream(seed, name)`` seeds a PCG64 generator from the entropy pair
``[seed, key(name)]`` where ``key`` is the first eight bytes (little-endian)
of the SHA-256 digest of the UTF-8 name. Any component can therefore be
re-run in isolation and still draw the same numbers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), key(name)])


def subseed(seed: int, name: str) -> int:
    """A 32-bit integer seed for components configured with plain ints."""
    return int(substream(seed, name).integers(2**31 - 1))
