"""Deterministic 64-bit seed derivation for independent RNG streams."""

_MASK = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix_seeds(master: int, stream: int) -> int:
    """Derive a decorrelated child seed from (master, stream index).

    Stable across runs and platforms; used everywhere a sub-seed is needed
    (per-iteration, per-member, per-epoch RNG streams).
    """
    return _splitmix64(_splitmix64(master & _MASK) ^ _splitmix64(stream & _MASK))
