"""Fully associative CAM block with an O(1) LRU discipline.

Entries live in fixed slots; the LRU order is a doubly linked list threaded
through the slots by index. A dictionary from the masked key to its slot
models the parallel CAM search.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from vmtsim.core import ActionRef, ByteMask, Key, masked_eq

BLOCK_SIZES = (32, 64, 128, 256, 512)

_NIL = -1


@dataclass(slots=True)
class CamEntry:
    """A single occupied CAM slot."""

    key: Key
    action: ActionRef
    prev: int = _NIL
    next: int = _NIL


class CamBlock:
    """A PMU's cache of (key, action) entries.

    Keys are indexed under the block's installed byte mask. Lookups with a
    different mask fall back to a linear masked comparison.
    """

    def __init__(self, capacity: int, mask: ByteMask | None = None) -> None:
        if capacity < 1:
            raise ValueError("CAM capacity must be >= 1")
        self.capacity = capacity
        self.mask = mask or ByteMask.full(64)
        self._slots: list[CamEntry | None] = [None] * capacity
        self._index: dict[bytes, int] = {}
        self._free: list[int] = list(range(capacity - 1, -1, -1))
        self._head = _NIL
        self._tail = _NIL
        self._hits = 0
        self._misses = 0
        self._evictions = 0

    # -- linked list helpers -------------------------------------------------

    def _unlink(self, slot: int) -> None:
        entry = self._slots[slot]
        assert entry is not None
        if entry.prev != _NIL:
            prev = self._slots[entry.prev]
            assert prev is not None
            prev.next = entry.next
        else:
            self._head = entry.next
        if entry.next != _NIL:
            nxt = self._slots[entry.next]
            assert nxt is not None
            nxt.prev = entry.prev
        else:
            self._tail = entry.prev
        entry.prev = entry.next = _NIL

    def _push_head(self, slot: int) -> None:
        entry = self._slots[slot]
        assert entry is not None
        entry.prev = _NIL
        entry.next = self._head
        if self._head != _NIL:
            head = self._slots[self._head]
            assert head is not None
            head.prev = slot
        self._head = slot
        if self._tail == _NIL:
            self._tail = slot

    def _touch(self, slot: int) -> None:
        if slot != self._head:
            self._unlink(slot)
            self._push_head(slot)

    # -- public API ----------------------------------------------------------

    def lookup(self, key: Key, mask: ByteMask | None = None) -> ActionRef | None:
        """Search the block; on a hit the entry moves to the LRU head.

        Args:
            key: Request key
            mask: Request byte mask (defaults to the installed mask)

        Returns:
            The stored action on a hit, None on a miss
        """
        slot: int | None
        if mask is None or mask == self.mask:
            slot = self._index.get(self.mask.apply(key))
        else:
            slot = self._scan(key, mask)
        if slot is None:
            self._misses += 1
            return None
        self._hits += 1
        self._touch(slot)
        entry = self._slots[slot]
        assert entry is not None
        return entry.action

    def _scan(self, key: Key, mask: ByteMask) -> int | None:
        slot = self._head
        while slot != _NIL:
            entry = self._slots[slot]
            assert entry is not None
            if masked_eq(entry.key, key, mask):
                return slot
            slot = entry.next
        return None

    def insert(self, key: Key, action: ActionRef) -> tuple[Key, ActionRef] | None:
        """Insert at the LRU head, evicting the tail when full.

        Re-inserting a present key refreshes its action and recency.

        Returns:
            The evicted (key, action) pair, if any
        """
        index_key = self.mask.apply(key)
        slot = self._index.get(index_key)
        if slot is not None:
            entry = self._slots[slot]
            assert entry is not None
            entry.action = action
            self._touch(slot)
            return None

        evicted: tuple[Key, ActionRef] | None = None
        if not self._free:
            victim = self._tail
            old = self._slots[victim]
            assert old is not None
            self._unlink(victim)
            del self._index[self.mask.apply(old.key)]
            self._slots[victim] = None
            self._free.append(victim)
            self._evictions += 1
            evicted = (old.key, old.action)

        slot = self._free.pop()
        self._slots[slot] = CamEntry(key=key, action=action)
        self._index[index_key] = slot
        self._push_head(slot)
        return evicted

    def flush(self, mask: ByteMask | None = None) -> int:
        """Drop every entry and optionally install a new mask.

        Returns:
            Number of entries flushed
        """
        count = len(self._index)
        self._slots = [None] * self.capacity
        self._index.clear()
        self._free = list(range(self.capacity - 1, -1, -1))
        self._head = self._tail = _NIL
        if mask is not None:
            self.mask = mask
        return count

    def keys(self) -> list[Key]:
        """Stored keys from most to least recently used."""
        out: list[Key] = []
        slot = self._head
        while slot != _NIL:
            entry = self._slots[slot]
            assert entry is not None
            out.append(entry.key)
            slot = entry.next
        return out

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: object) -> bool:
        return isinstance(key, Key) and self.mask.apply(key) in self._index

    def stats(self) -> dict[str, Any]:
        """Get block statistics."""
        total = self._hits + self._misses
        return {
            "capacity": self.capacity,
            "entries": len(self._index),
            "hits": self._hits,
            "misses": self._misses,
            "evictions": self._evictions,
            "hit_rate": round(self._hits / total * 100, 1) if total > 0 else 0,
        }


def cam_lookup(block: CamBlock, key: Key, mask: ByteMask) -> ActionRef | None:
    """Module-level alias for :meth:`CamBlock.lookup`."""
    return block.lookup(key, mask)


def cam_insert_lru(block: CamBlock, key: Key, action: ActionRef) -> tuple[Key, ActionRef] | None:
    """Module-level alias for :meth:`CamBlock.insert`."""
    return block.insert(key, action)
