"""Deterministic seed derivation.

All randomness in a run flows from one root seed through named sub-streams
(``derive_seed("agent", root)``, ``derive_seed(step_seed, patch, kind)`` ...).
Derivation hashes the parts with SHA-256, so streams are stable across
platforms and processes -- Python's builtin ``hash`` is salted and unusable
for this.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map an arbitrary tuple of ints/strings to a stable 64-bit seed."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_from(*parts) -> np.random.Generator:
    """A fresh PCG64 generator seeded from the derived seed of ``parts``."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
