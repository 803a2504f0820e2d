"""Deterministic random streams keyed by ``(seed, task kind, index)``.

Each task gets its own counter-based Philox generator whose key is derived
from the triple, so results do not depend on which worker runs which task
or in what order.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _kind_code(kind: str) -> int:
    return zlib.crc32(kind.encode("utf-8"))


def stream(seed: int, kind: str, index: int = 0) -> np.random.Generator:
    """Independent generator for task ``index`` of family ``kind``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence([seed & _MASK64, seed >> 64, _kind_code(kind), index])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def derive_seed(seed: int, kind: str, index: int = 0) -> int:
    """A 64-bit child seed, for objects that store their own seed."""
    ss = np.random.SeedSequence([seed & _MASK64, seed >> 64, _kind_code(kind), index])
    return int(ss.generate_state(1, np.uint64)[0])
