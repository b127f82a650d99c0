"""Stable sub-seed derivation.

Every random stream in the simulator is keyed by a master seed plus a role
string and integer indices. The derivation is part of the output contract:

    seed = uint64 little-endian of blake2b-8("fedpsi|<master>|<role>|<i0>|<i1>|...")

so results never depend on the order in which streams are created.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, role: str, *indices: int | str) -> int:
    """Return a 64-bit sub-seed for ``(master, role, *indices)``."""
    parts = ["fedpsi", str(int(master) & _MASK64), role, *(str(i) for i in indices)]
    digest = hashlib.blake2b("|".join(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(master: int, role: str, *indices: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, role, *indices))
