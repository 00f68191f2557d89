"""Deterministic RNG derivation so every stochastic choice is replayable."""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(text: str) -> int:
    """Platform- and process-independent 64-bit hash of a string."""
    digest = hashlib.blake2s(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_rng(*keys) -> np.random.Generator:
    """Generator seeded from a mix of ints and strings.

    The same keys always produce the same stream, regardless of call order
    elsewhere in the program.
    """
    material = [
        stable_hash(k) if isinstance(k, str) else int(k) & _MASK64 for k in keys
    ]
    return np.random.default_rng(material)


def sample_rng(seed: int, epoch: int, sample_id: str) -> np.random.Generator:
    """Per-sample stream: reproducible across runs, varying across epochs.

    Used for instance subsampling and dropout, so a sample's noise does not
    depend on its position in the shuffled epoch order.
    """
    return derive_rng(seed, epoch, sample_id)
