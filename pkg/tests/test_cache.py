"""Tests for the CAM block and its LRU discipline."""

from __future__ import annotations

import random
from collections import OrderedDict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmtsim.core import ByteMask, Key
from vmtsim.utils.cache import CamBlock, cam_insert_lru, cam_lookup


def k(value: int, width: int = 2) -> Key:
    return Key.from_int(value, width)


class TestCamLookup:
    """Tests for cam_lookup."""

    def test_empty_block_misses(self):
        """Test a lookup in an empty block misses."""
        block = CamBlock(32)
        assert cam_lookup(block, k(1), ByteMask.full(2)) is None

    def test_hit_moves_to_head(self):
        """Test a hit makes the entry most recently used."""
        block = CamBlock(4, ByteMask.full(2))
        for v in (1, 2, 3):
            block.insert(k(v), v)
        assert block.lookup(k(1)) == 1
        assert block.keys()[0] == k(1)

    def test_masked_bytes_ignored(self):
        """Test the installed mask disables bytes for matching."""
        block = CamBlock(4, ByteMask.of(0))
        block.insert(Key(b"\x0a\x0b"), 9)
        assert block.lookup(Key(b"\x0a\xff")) == 9
        assert block.lookup(Key(b"\x0b\x0b")) is None

    def test_foreign_mask_scans(self):
        """Test a request mask other than the installed one falls back to a scan."""
        block = CamBlock(4, ByteMask.full(2))
        block.insert(Key(b"\x0a\x0b"), 3)
        assert block.lookup(Key(b"\x0a\xff"), ByteMask.of(0)) == 3

    def test_stats(self):
        """Test hit and miss counters."""
        block = CamBlock(2, ByteMask.full(2))
        block.insert(k(1), 1)
        block.lookup(k(1))
        block.lookup(k(2))
        stats = block.stats()
        assert stats["hits"] == 1
        assert stats["misses"] == 1
        assert stats["hit_rate"] == 50.0


class TestCamInsert:
    """Tests for cam_insert_lru."""

    def test_insert_into_free_slot(self):
        """Test no eviction while there is room."""
        block = CamBlock(2, ByteMask.full(2))
        assert cam_insert_lru(block, k(1), 1) is None
        assert len(block) == 1

    def test_evicts_least_recently_used(self):
        """Test the tail is evicted when full."""
        block = CamBlock(2, ByteMask.full(2))
        block.insert(k(1), 1)
        block.insert(k(2), 2)
        block.lookup(k(1))
        assert block.insert(k(3), 3) == (k(2), 2)
        assert k(2) not in block
        assert k(1) in block

    def test_reinsert_refreshes(self):
        """Test re-inserting a present key updates it without eviction."""
        block = CamBlock(2, ByteMask.full(2))
        block.insert(k(1), 1)
        block.insert(k(2), 2)
        assert block.insert(k(1), 7) is None
        assert block.lookup(k(1)) == 7
        assert len(block) == 2

    def test_flush_installs_mask(self):
        """Test flush empties the block and installs a new mask."""
        block = CamBlock(4, ByteMask.full(2))
        block.insert(k(1), 1)
        assert block.flush(ByteMask.of(0)) == 1
        assert len(block) == 0
        assert block.mask == ByteMask.of(0)

    def test_capacity_must_be_positive(self):
        """Test zero capacity is rejected."""
        with pytest.raises(ValueError):
            CamBlock(0)


class ReferenceLru:
    """Order-list LRU model."""

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.entries: OrderedDict[Key, int] = OrderedDict()

    def lookup(self, key: Key) -> int | None:
        if key not in self.entries:
            return None
        self.entries.move_to_end(key, last=False)
        return self.entries[key]

    def insert(self, key: Key, action: int) -> tuple[Key, int] | None:
        if key in self.entries:
            self.entries[key] = action
            self.entries.move_to_end(key, last=False)
            return None
        evicted = None
        if len(self.entries) >= self.capacity:
            evicted = self.entries.popitem(last=True)
        self.entries[key] = action
        self.entries.move_to_end(key, last=False)
        return evicted


class TestLruReference:
    """Equivalence with an order-list reference model."""

    def test_long_random_sequence(self):
        """Test 10^5 mixed operations on a 32-entry block."""
        rng = random.Random(42)
        block = CamBlock(32, ByteMask.full(2))
        ref = ReferenceLru(32)
        for _ in range(100_000):
            key = k(rng.randrange(64))
            if rng.random() < 0.5:
                assert block.lookup(key) == ref.lookup(key)
            else:
                action = rng.randrange(1000)
                assert block.insert(key, action) == ref.insert(key, action)
        assert block.keys() == list(ref.entries)

    @settings(max_examples=50)
    @given(
        st.integers(1, 8),
        st.lists(st.tuples(st.booleans(), st.integers(0, 15), st.integers(0, 99)), max_size=200),
    )
    def test_matches_reference(self, capacity, ops):
        """Test hit/miss/evict sequences match the model."""
        block = CamBlock(capacity, ByteMask.full(2))
        ref = ReferenceLru(capacity)
        for is_lookup, value, action in ops:
            if is_lookup:
                assert block.lookup(k(value)) == ref.lookup(k(value))
            else:
                assert block.insert(k(value), action) == ref.insert(k(value), action)
            assert len(block) <= capacity
        assert block.keys() == list(ref.entries)
