"""Deterministic seed derivation.

All randomness in the package flows through numpy PCG64 generators whose
seeds are derived from a single base seed plus a tuple of string/int tags.
Deriving instead of sharing one stream means every consumer (model init,
step-k batch selection, per-clip audio synthesis, ...) gets an independent,
reproducible stream that does not depend on call order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base: int, *tags) -> int:
    """Map (base, tags...) to a stable 64-bit seed via blake2b."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base)).encode())
    for t in tags:
        h.update(b"/")
        h.update(str(t).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(base: int, *tags) -> np.random.Generator:
    """A fresh PCG64 generator for the given (base, tags...) address."""
    return np.random.Generator(np.random.PCG64(derive_seed(base, *tags)))
