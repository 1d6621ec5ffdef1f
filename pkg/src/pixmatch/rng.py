"""Fixed, platform-independent random number generator.

All synthesis and sampling in this package draws from xoshiro256** seeded
through splitmix64, implemented over exact 64-bit integer arithmetic.  The
point is bit-reproducibility of every generated dataset across platforms and
Python versions; stdlib/numpy generators are deliberately not used on any
path that feeds persisted outputs.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *indices: int) -> int:
    """Derive a stream-independent child seed from a master seed.

    Used to give every trajectory / operation its own deterministic stream
    without the streams overlapping.
    """
    state = seed & _MASK64
    for idx in indices:
        state ^= (idx + 1) * _GOLDEN & _MASK64
        state, out = _splitmix64(state)
        state = out
    state, out = _splitmix64(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** stream, state seeded via splitmix64."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = _splitmix64(state)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n), rejection-sampled to avoid modulo bias."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        threshold = ((1 << 64) // n) * n
        while True:
            u = self.next_u64()
            if u < threshold:
                return u % n

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def choice_weighted(self, weights) -> int:
        """Index drawn proportionally to non-negative weights."""
        total = 0.0
        for w in weights:
            if w < 0:
                raise ValueError("negative weight")
            total += w
        if total <= 0.0:
            raise ValueError("weights sum to zero")
        u = self.random() * total
        acc = 0.0
        last_positive = -1
        for i, w in enumerate(weights):
            if w > 0:
                last_positive = i
            acc += w
            if u < acc:
                return i
        return last_positive
