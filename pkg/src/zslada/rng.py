"""Deterministic named random streams.

All randomness in the package flows from a single 64-bit root seed. A
stream is addressed by the root seed plus a path of names (strings and
integers), hashed into an independent child seed, so dropout masks, weight
init, and sampling can each be reproduced in isolation without consuming
from a shared generator.
"""

from __future__ import annotations

import hashlib

import numpy as np


def named_seed(root: int, *path: int | str) -> int:
    """Derive a child seed from a root seed and a path of stream names."""
    token = repr((int(root),) + tuple(path)).encode()
    digest = hashlib.blake2b(token, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def named_stream(root: int, *path: int | str) -> np.random.Generator:
    """Generator for the stream addressed by ``root`` and ``path``."""
    return np.random.default_rng(named_seed(root, *path))
