"""Counter-based random number streams.

Every source of randomness in the package is a Philox stream addressed by
(seed, *key).  Philox is counter-based, so a stream is a pure function of
its key: fields, walkers and test corpora are reproducible element by
element, independent of execution order or thread count.

Conventions used elsewhere:

* environment sampling:   stream(seed, "env", *model-specific ints)
* walker w, exponentials: stream(seed, "walk", w, 0)
* walker w, uniforms:     stream(seed, "walk", w, 1)
* test corpora / stats:   stream(seed, "corpus", trial_block)
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "key_hash"]


def key_hash(*parts) -> int:
    """Stable 128-bit integer digest of a key tuple.

    Strings and ints are hashed by their repr; this keeps keys readable at
    call sites while remaining platform independent.
    """
    h = hashlib.blake2b(repr(tuple(parts)).encode(), digest_size=16)
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *key) -> np.random.Generator:
    """Independent Philox generator addressed by (seed, *key)."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1),
                                spawn_key=(key_hash(*key),))
    return np.random.Generator(np.random.Philox(ss))
