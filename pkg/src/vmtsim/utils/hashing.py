"""Hashing utilities for key steering.

Provides the lookup3 ``hashlittle`` hash used for bucket selection and a
consistent-hash ring with virtual nodes.
"""

from __future__ import annotations

from bisect import bisect_left
from collections.abc import Iterable

MASK32 = 0xFFFF_FFFF
RING_SIZE = 1 << 32


def _rot(x: int, k: int) -> int:
    return ((x << k) | (x >> (32 - k))) & MASK32


def _mix(a: int, b: int, c: int) -> tuple[int, int, int]:
    a = (a - c) & MASK32
    a ^= _rot(c, 4)
    c = (c + b) & MASK32
    b = (b - a) & MASK32
    b ^= _rot(a, 6)
    a = (a + c) & MASK32
    c = (c - b) & MASK32
    c ^= _rot(b, 8)
    b = (b + a) & MASK32
    a = (a - c) & MASK32
    a ^= _rot(c, 16)
    c = (c + b) & MASK32
    b = (b - a) & MASK32
    b ^= _rot(a, 19)
    a = (a + c) & MASK32
    c = (c - b) & MASK32
    c ^= _rot(b, 4)
    b = (b + a) & MASK32
    return a, b, c


def _final(a: int, b: int, c: int) -> int:
    c ^= b
    c = (c - _rot(b, 14)) & MASK32
    a ^= c
    a = (a - _rot(c, 11)) & MASK32
    b ^= a
    b = (b - _rot(a, 25)) & MASK32
    c ^= b
    c = (c - _rot(b, 16)) & MASK32
    a ^= c
    a = (a - _rot(c, 4)) & MASK32
    b ^= a
    b = (b - _rot(a, 14)) & MASK32
    c ^= b
    c = (c - _rot(b, 24)) & MASK32
    return c


def hash32(data: bytes | str, initval: int = 0) -> int:
    """Bob Jenkins' lookup3 ``hashlittle`` over a byte string.

    Args:
        data: Bytes to hash (strings are UTF-8 encoded)
        initval: Seed value

    Returns:
        Unsigned 32-bit hash
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    length = len(data)
    a = b = c = (0xDEADBEEF + length + initval) & MASK32

    offset = 0
    remaining = length
    while remaining > 12:
        a = (a + int.from_bytes(data[offset : offset + 4], "little")) & MASK32
        b = (b + int.from_bytes(data[offset + 4 : offset + 8], "little")) & MASK32
        c = (c + int.from_bytes(data[offset + 8 : offset + 12], "little")) & MASK32
        a, b, c = _mix(a, b, c)
        offset += 12
        remaining -= 12

    if remaining == 0:
        return c

    tail = data[offset:].ljust(12, b"\x00")
    a = (a + int.from_bytes(tail[0:4], "little")) & MASK32
    b = (b + int.from_bytes(tail[4:8], "little")) & MASK32
    c = (c + int.from_bytes(tail[8:12], "little")) & MASK32
    return _final(a, b, c)


class HashRing:
    """Consistent-hash ring with a fixed number of virtual nodes per member.

    Virtual node ``k`` of member ``p`` sits at ``hash32("<salt>:<p>:<k>")``.
    Position collisions are broken by member id so the ring is a total order.
    """

    def __init__(self, members: Iterable[int] = (), vnodes: int = 64, salt: int = 0) -> None:
        if vnodes < 1:
            raise ValueError("vnodes must be >= 1")
        self.vnodes = vnodes
        self.salt = salt
        self._members: set[int] = set()
        self._ring: list[tuple[int, int]] = []
        self._positions: list[int] = []
        for member in members:
            self._members.add(member)
        self._rebuild()

    def _rebuild(self) -> None:
        ring = [
            (hash32(f"{self.salt}:{member}:{k}"), member)
            for member in self._members
            for k in range(self.vnodes)
        ]
        ring.sort()
        self._ring = ring
        self._positions = [pos for pos, _ in ring]

    @property
    def members(self) -> frozenset[int]:
        """Members currently on the ring."""
        return frozenset(self._members)

    @property
    def positions(self) -> list[tuple[int, int]]:
        """Sorted (position, member) pairs."""
        return list(self._ring)

    def add(self, member: int) -> None:
        """Add a member and its virtual nodes."""
        if member not in self._members:
            self._members.add(member)
            self._rebuild()

    def remove(self, member: int) -> None:
        """Remove a member and its virtual nodes."""
        if member in self._members:
            self._members.discard(member)
            self._rebuild()

    def owner(self, position: int) -> int | None:
        """Member owning a ring position (first virtual node at or after it)."""
        if not self._ring:
            return None
        idx = bisect_left(self._positions, position)
        if idx == len(self._positions):
            idx = 0  # wrap around
        return self._ring[idx][1]

    def __len__(self) -> int:
        return len(self._ring)
