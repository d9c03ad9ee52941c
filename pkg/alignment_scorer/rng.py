"""
Named, versioned random streams.

All randomness goes through numpy's Philox-4x64 counter-based generator. A
stream is keyed by (seed, labels): the 128-bit Philox key holds the seed in
its low word and a BLAKE2b digest of the labels in its high word, so every
(seed, purpose, item) triple owns an independent, reproducible stream and
the draw order documented at each call site is the whole contract.
"""
import hashlib

import numpy as np

RNG_NAME = 'philox4x64'
RNG_VERSION = 1

_MASK64 = (1 << 64) - 1


def label_digest(*labels) -> int:
    text = '/'.join(str(label) for label in labels)
    digest = hashlib.blake2b(f'{RNG_NAME}-v{RNG_VERSION}:{text}'.encode('utf-8'), digest_size=8)
    return int.from_bytes(digest.digest(), 'little')


def make_rng(seed: int, *labels) -> np.random.Generator:
    key = (label_digest(*labels) << 64) | (int(seed) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *labels) -> int:
    """
    Child seed for a sub-stream, e.g. one epoch or one record
    """
    return (label_digest(seed, *labels) ^ (int(seed) & _MASK64)) & _MASK64
