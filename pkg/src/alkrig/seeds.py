"""Deterministic sub-seed derivation.

Every stochastic component of an experiment (pool, initial design, model
fits, reference runs) draws from its own stream so that changing one stage
never perturbs another.  Sub-seeds are the first 8 bytes of
``sha256("{root}:{label}[:{label}...]")`` interpreted as a big-endian
unsigned integer.
"""

from __future__ import annotations

import hashlib

__all__ = ["derive_seed"]


def derive_seed(root: int, *labels) -> int:
    text = ":".join([str(int(root))] + [str(l) for l in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
