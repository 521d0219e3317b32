"""Deterministic counter-friendly random streams.

Everything here is built on splitmix64 so that any consumer can be handed a
stream derived from (seed, tags...) and produce the same numbers regardless of
scheduling, worker count or query order.
"""

from __future__ import annotations

import math
import struct

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    # splitmix64 finalizer
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def _fold(acc: int, part) -> int:
    if isinstance(part, str):
        value = 0
        for byte in part.encode("utf-8"):
            value = _mix((value + byte) & _MASK64)
    elif isinstance(part, float):
        value = struct.unpack("<Q", struct.pack("<d", part))[0]
    elif isinstance(part, int):
        value = part & _MASK64
    else:
        raise TypeError(f"cannot fold {type(part).__name__} into a seed")
    return _mix((acc + _GAMMA + value) & _MASK64)


def derive_seed(seed: int, *tags) -> int:
    """Stable 64-bit hash of a global seed plus arbitrary int/float/str tags."""
    acc = _mix(seed & _MASK64)
    for tag in tags:
        acc = _fold(acc, tag)
    return acc


class Stream:
    """Stateful splitmix64 stream; cheap to create, independent per seed."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def uniform(self) -> float:
        """Uniform in (0, 1] (safe for log)."""
        return ((self.u64() >> 11) + 1) * 2.0**-53

    def exponential(self, rate: float) -> float:
        return -math.log(self.uniform()) / rate

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * ((self.u64() >> 11) * 2.0**-53)

    def normal(self) -> float:
        # Box-Muller, one value per call (no caching keeps replay trivial)
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(math.tau * u2)

    def poisson(self, lam: float) -> int:
        """Inverse-CDF Poisson draw; exact and reproducible for moderate lam."""
        if lam < 0.0:
            raise ValueError("lam must be nonnegative")
        if lam > 1e4:
            raise ValueError("lam too large for inverse-CDF sampling")
        u = self.uniform()
        p = math.exp(-lam)
        cum = p
        k = 0
        while u > cum:
            k += 1
            p *= lam / k
            cum += p
            if k > 10_000_000:  # unreachable for allowed lam
                raise RuntimeError("poisson sampling failed to terminate")
        return k


def stream(seed: int, *tags) -> Stream:
    """Stream seeded by `derive_seed(seed, *tags)`."""
    return Stream(derive_seed(seed, *tags))
