"""Counter-based, splittable random streams.

Each stream is a 64-bit key plus a position counter. Draw ``i`` of a stream is
a SplitMix64 finaliser applied to ``key + i * GOLDEN``, so any draw can be
recomputed from ``(key, i)`` alone and child streams are derived by hashing
the parent key with an ordinal. Everything is plain integer arithmetic, so the
sequence is identical on every platform.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SPLIT = 0xD1B54A32D192ED03
_TWO53 = 2.0 ** -53


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(seed: int, *path: int) -> int:
    """Hash a seed and a path of integers into a stream key."""
    key = mix64((seed * _GOLDEN + 0x632BE59BD9B4E019) & _MASK)
    for p in path:
        key = mix64((key ^ mix64(((p + 1) * _SPLIT) & _MASK)) & _MASK)
    return key


class RngStream:
    __slots__ = ("key", "position", "_splits")

    def __init__(self, seed: int = 0, *path: int, key: int | None = None):
        self.key = derive_key(seed, *path) if key is None else key & _MASK
        self.position = 0
        self._splits = 0

    def __repr__(self):
        return f"RngStream(key={self.key:#018x}, position={self.position})"

    def next_u64(self) -> int:
        self.position += 1
        return mix64((self.key + self.position * _GOLDEN) & _MASK)

    def random(self) -> float:
        """Uniform double strictly inside (0, 1)."""
        self.position += 1
        z = (self.key + self.position * _GOLDEN) & _MASK
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return (((z ^ (z >> 31)) >> 11) + 0.5) * _TWO53

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow needs a positive bound")
        return min(int(self.random() * n), n - 1)

    def split(self, ordinal: int | None = None) -> "RngStream":
        """A child stream keyed by (this key, ordinal).

        Without an explicit ordinal the stream's own split counter is used and
        advanced, so successive splits give distinct children.
        """
        if ordinal is None:
            ordinal = self._splits
            self._splits += 1
        child = RngStream.__new__(RngStream)
        child.key = mix64((self.key ^ mix64(((ordinal + 1) * _SPLIT) & _MASK)) & _MASK)
        child.position = 0
        child._splits = 0
        return child

    def copy(self) -> "RngStream":
        c = RngStream.__new__(RngStream)
        c.key, c.position, c._splits = self.key, self.position, self._splits
        return c
