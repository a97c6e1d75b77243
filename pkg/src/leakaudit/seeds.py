"""Deterministic seed derivation for nested experiment components.

A master seed plus a role tag and counter index are mixed through
``numpy.random.SeedSequence`` so that every component (repetition, target
trainer, shadow i, ...) gets an independent, reproducible stream that does
not depend on execution order.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_seed", "derive_rng"]


def derive_seed(master: int, role: str, index: int = 0) -> int:
    """Return a 63-bit seed derived from (master, role, index)."""
    tag = zlib.crc32(role.encode("utf-8"))
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, tag, int(index)])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def derive_rng(master: int, role: str, index: int = 0) -> np.random.Generator:
    """Generator seeded by :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(master, role, index))
