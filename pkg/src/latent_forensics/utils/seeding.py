import hashlib

import numpy as np


def _key_to_int(key: str | int) -> int:
    if isinstance(key, int):
        if key < 0:
            raise ValueError(f"Seed keys must be non-negative, got {key}")
        return key
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:4], "little")


def derive_seed(seed: int, *keys: str | int) -> int:
    """
    Derive an independent 32-bit seed from a master seed and a path of keys.

    The result depends only on its arguments, so serial and parallel callers that
    use the same (seed, keys) pair draw identical streams.
    """
    sequence = np.random.SeedSequence(entropy=_key_to_int(seed), spawn_key=[_key_to_int(k) for k in keys])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def rng_for(seed: int, *keys: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
