"""Deterministic per-purpose seed derivation.

One master seed expands into independent sub-seeds by folding purpose
tags (strings or ints) into the state with FNV-1a and scrambling with the
splitmix64 finalizer. Any sub-stage can be reproduced from the master
seed plus its tag path, e.g. derive_seed(seed, "kmeans", stage, cls).
"""

_MASK = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _fnv1a(data):
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def derive_seed(master, *tags):
    state = int(master) & _MASK
    for tag in tags:
        if isinstance(tag, str):
            folded = _fnv1a(tag.encode("utf-8"))
        else:
            folded = _fnv1a(int(tag).to_bytes(8, "little", signed=True))
        state = _splitmix64(state ^ folded)
    return state
