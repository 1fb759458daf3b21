"""Various utilities"""
from hashlib import sha256

import numpy as np


def make_fingerprint(text: str) -> str:
    """Uses sha256 to hash the supplied text, used for config hashes"""
    return sha256(text.encode()).hexdigest()


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for the stream identified by `stream`, the
    same keys always give the same numbers

    >>> float(rng_for(1, 2).random()) == float(rng_for(1, 2).random())
    True
    """
    return np.random.default_rng([seed, *stream])
