"""Keyed, order-independent random stream derivation.

Evaluations cached by (task, particle) must not depend on the order in which
they are computed, so streams are derived from content keys rather than drawn
from one shared generator.
"""

from __future__ import annotations

import hashlib

import numpy as np


def text_key(text: str) -> int:
    """Stable 64-bit integer key for a string."""
    return int.from_bytes(hashlib.blake2s(text.encode("utf-8")).digest()[:8], "little")


def derive_rng(*entropy: int) -> np.random.Generator:
    """Fresh generator from a deterministic tuple of integers."""
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def derive_int(*entropy: int) -> int:
    """Deterministic 64-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint64)[0])
