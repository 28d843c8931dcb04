from __future__ import annotations

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int, seed: int = 0) -> int:
    """splitmix64 finalizer over ``x`` perturbed by ``seed``."""
    z = (x + seed * _GOLDEN + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def combine(*parts: int) -> int:
    h = 0
    for p in parts:
        h = mix64(h ^ (p & MASK64), 0x51ED)
    return h


def unit_interval(*parts: int) -> float:
    """Deterministic float in [0, 1) derived from ``parts``."""
    return (combine(*parts) >> 11) * (1.0 / (1 << 53))
