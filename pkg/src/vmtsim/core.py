"""Shared domain primitives for vmtsim.

Keys, byte masks, action references, packet header vectors, lookup
requests/responses, bounded clocked queues and the seeded random source.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Iterator
from dataclasses import dataclass, field
from typing import Generic, TypeVar

import numpy as np

from vmtsim.utils.hashing import hash32

W_MAX = 64
NOT_FOUND = 0xFFFF_FFFF
NOP_ACTION = 0

SOURCE = "s"
SINK = "t"

NodeId = int | str
ActionRef = int

T = TypeVar("T")


class ProtocolFault(Exception):
    """A simulator invariant was broken (indicates a bug, never a workload property)."""

    def __init__(self, message: str, unit: str | None = None, req_id: int | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.unit = unit
        self.req_id = req_id


@dataclass(frozen=True, slots=True)
class Key:
    """Fixed-width byte vector; the unit of matching."""

    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) > W_MAX:
            raise ValueError(f"Key width {len(self.data)} exceeds W_MAX={W_MAX}")

    @property
    def width(self) -> int:
        return len(self.data)

    def byte(self, i: int) -> int:
        """Byte at position i; positions beyond the width read as zero."""
        return self.data[i] if i < len(self.data) else 0

    def to_int(self) -> int:
        return int.from_bytes(self.data, "big")

    def hex(self) -> str:
        return self.data.hex()

    def resized(self, width: int) -> Key:
        """Truncate or zero-pad to ``width`` bytes."""
        if width == len(self.data):
            return self
        return Key(self.data[:width].ljust(width, b"\x00"))

    @classmethod
    def from_int(cls, value: int, width: int) -> Key:
        return cls(value.to_bytes(width, "big"))

    @classmethod
    def from_hex(cls, text: str) -> Key:
        return cls(bytes.fromhex(text))

    def __repr__(self) -> str:
        return f"Key(0x{self.data.hex()})"


@dataclass(frozen=True, slots=True)
class ByteMask:
    """Per-byte validity bit set (bit i set means byte i participates in matching)."""

    valid: int

    @classmethod
    def full(cls, width: int) -> ByteMask:
        return cls((1 << width) - 1)

    @classmethod
    def empty(cls) -> ByteMask:
        return cls(0)

    @classmethod
    def of(cls, *positions: int) -> ByteMask:
        bits = 0
        for p in positions:
            bits |= 1 << p
        return cls(bits)

    def is_set(self, i: int) -> bool:
        return bool(self.valid >> i & 1)

    def positions(self) -> Iterator[int]:
        bits = self.valid
        i = 0
        while bits:
            if bits & 1:
                yield i
            bits >>= 1
            i += 1

    def restrict(self, width: int) -> ByteMask:
        """Clear bits at positions >= width."""
        return ByteMask(self.valid & ((1 << width) - 1))

    def apply(self, key: Key) -> bytes:
        """Canonical form of ``key`` with masked-out bytes zeroed (over W_MAX)."""
        top = max(key.width, self.valid.bit_length())
        return bytes(key.byte(i) if self.is_set(i) else 0 for i in range(top)).rstrip(b"\x00")


def masked_eq(a: Key, b: Key, mask: ByteMask) -> bool:
    """True iff ``a`` and ``b`` agree on every byte whose mask bit is set."""
    return all(a.byte(i) == b.byte(i) for i in mask.positions())


@dataclass(slots=True)
class Phv:
    """Packet header vector flowing through the control-flow graph."""

    phv_id: int
    flow_id: int
    keys: dict[int, Key]
    arrival_cycle: int
    current_node: NodeId = SOURCE
    path_seed: int = 0
    actions: dict[int, ActionRef] = field(default_factory=dict)
    path: list[NodeId] = field(default_factory=list)


@dataclass(frozen=True, slots=True)
class LookupRequest:
    """A key lookup sent from a VMT to one of its PMUs."""

    req_id: int
    key: Key
    mask: ByteMask
    vmt_id: int
    pmu_id: int
    issue_cycle: int = 0


@dataclass(frozen=True, slots=True)
class LookupResponse:
    """A PMU answer; ``valid=False`` is the early miss notification."""

    req_id: int
    action: ActionRef
    valid: bool
    vmt_id: int
    pmu_id: int

    def __post_init__(self) -> None:
        if self.valid == (self.action == NOT_FOUND):
            raise ProtocolFault(
                f"Response valid={self.valid} inconsistent with action {self.action:#x}",
                unit=f"pmu{self.pmu_id}",
                req_id=self.req_id,
            )


class ClockedQueue(Generic[T]):
    """Bounded FIFO; a push into a full queue is rejected, never dropped silently."""

    def __init__(self, capacity: int, name: str = "") -> None:
        if capacity < 1:
            raise ValueError("Queue capacity must be >= 1")
        self.capacity = capacity
        self.name = name
        self._items: deque[T] = deque()
        self.pushes = 0
        self.rejects = 0
        self.high_water = 0

    def push(self, item: T) -> bool:
        """Append ``item`` if there is room; returns whether it was accepted."""
        if len(self._items) >= self.capacity:
            self.rejects += 1
            return False
        self._items.append(item)
        self.pushes += 1
        if len(self._items) > self.high_water:
            self.high_water = len(self._items)
        return True

    def pop(self) -> T:
        return self._items.popleft()

    def peek(self) -> T | None:
        return self._items[0] if self._items else None

    def clear(self) -> None:
        self._items.clear()

    @property
    def free(self) -> int:
        return self.capacity - len(self._items)

    def full(self) -> bool:
        return len(self._items) >= self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def __bool__(self) -> bool:
        return bool(self._items)

    def __iter__(self) -> Iterator[T]:
        return iter(self._items)

    def __repr__(self) -> str:
        return f"ClockedQueue({self.name!r}, {len(self._items)}/{self.capacity})"


def queue_push(q: ClockedQueue[T], item: T) -> bool:
    """Push with backpressure; returns False when ``q`` is full."""
    return q.push(item)


class SeededRng:
    """Deterministic random source over numpy's PCG64.

    Named child streams are derived from ``(seed, hash32(name))`` so adding a
    stream never perturbs another.
    """

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self.gen = np.random.Generator(np.random.PCG64(seed))

    def child(self, name: str) -> SeededRng:
        seq = np.random.SeedSequence([self.seed & 0xFFFF_FFFF_FFFF_FFFF, hash32(name)])
        return SeededRng(int(seq.generate_state(1, dtype=np.uint64)[0]))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self.gen.integers(low, high))

    def random(self) -> float:
        return float(self.gen.random())

    def key(self, width: int) -> Key:
        return Key(self.gen.bytes(width))
