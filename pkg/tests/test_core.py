"""Tests for the shared domain primitives."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmtsim.core import (
    NOT_FOUND,
    ByteMask,
    ClockedQueue,
    Key,
    LookupResponse,
    ProtocolFault,
    SeededRng,
    masked_eq,
    queue_push,
)


class TestKey:
    """Tests for Key."""

    def test_bytes_beyond_width_read_as_zero(self):
        """Test positions past the width read as zero."""
        key = Key(b"\x0a\x0b")
        assert key.byte(0) == 0x0A
        assert key.byte(1) == 0x0B
        assert key.byte(5) == 0

    def test_width_limit(self):
        """Test keys wider than 64 bytes are rejected."""
        with pytest.raises(ValueError):
            Key(bytes(65))

    def test_resized(self):
        """Test truncation and zero padding."""
        key = Key.from_int(0x0A0B0C, 3)
        assert key.resized(2) == Key(b"\x0a\x0b")
        assert key.resized(4) == Key(b"\x0a\x0b\x0c\x00")
        assert key.resized(3) is key

    def test_hex_round_trip(self):
        """Test hex encoding."""
        key = Key.from_hex("c0a80001")
        assert key.hex() == "c0a80001"
        assert key.to_int() == 0xC0A80001


class TestMaskedEq:
    """Tests for masked_eq."""

    def test_identical_keys_full_mask(self):
        """Test equal keys under a full mask."""
        assert masked_eq(Key(b"\x0a\x0b"), Key(b"\x0a\x0b"), ByteMask.full(2))

    def test_masked_byte_ignored(self):
        """Test a differing byte outside the mask is ignored."""
        assert masked_eq(Key(b"\x0a\x0b"), Key(b"\x0a\xff"), ByteMask.of(0))

    def test_unmasked_byte_differs(self):
        """Test a differing byte inside the mask fails the match."""
        assert not masked_eq(Key(b"\x0a\x0b"), Key(b"\x0b\xff"), ByteMask.of(0))

    @given(st.binary(max_size=64), st.binary(max_size=64))
    def test_empty_mask_always_true(self, a, b):
        """Test the empty mask matches everything."""
        assert masked_eq(Key(a), Key(b), ByteMask.empty())

    @given(st.integers(1, 16).flatmap(lambda w: st.tuples(st.binary(min_size=w, max_size=w), st.binary(min_size=w, max_size=w))))
    def test_full_mask_is_bytewise_equality(self, pair):
        """Test a full mask reduces to byte-wise equality."""
        a, b = pair
        assert masked_eq(Key(a), Key(b), ByteMask.full(len(a))) == (a == b)

    def test_mask_apply_canonical_form(self):
        """Test apply zeroes masked-out bytes."""
        assert ByteMask.of(1).apply(Key(b"\x01\x02\x03")) == b"\x00\x02"
        assert ByteMask.of(0, 2).restrict(2) == ByteMask.of(0)


class TestLookupResponse:
    """Tests for LookupResponse invariants."""

    def test_early_miss(self):
        """Test valid=False pairs with NOT_FOUND."""
        resp = LookupResponse(1, NOT_FOUND, False, 0, 0)
        assert not resp.valid

    def test_inconsistent_response_is_fault(self):
        """Test a valid response carrying NOT_FOUND is a protocol fault."""
        with pytest.raises(ProtocolFault) as exc:
            LookupResponse(7, NOT_FOUND, True, 0, 3)
        assert exc.value.req_id == 7
        assert exc.value.unit == "pmu3"

    def test_invalid_response_with_action_is_fault(self):
        """Test an early miss carrying an action is a protocol fault."""
        with pytest.raises(ProtocolFault):
            LookupResponse(1, 5, False, 0, 0)


class TestClockedQueue:
    """Tests for ClockedQueue."""

    def test_push_into_empty(self):
        """Test pushing into an empty queue."""
        q: ClockedQueue[str] = ClockedQueue(4)
        assert queue_push(q, "x")
        assert len(q) == 1

    def test_push_into_full_rejected(self):
        """Test a full queue rejects and keeps its contents."""
        q: ClockedQueue[int] = ClockedQueue(2)
        assert q.push(1) and q.push(2)
        assert not queue_push(q, 3)
        assert list(q) == [1, 2]
        assert q.rejects == 1
        assert q.full()

    def test_fifo(self):
        """Test FIFO order."""
        q: ClockedQueue[str] = ClockedQueue(4)
        q.push("a")
        q.push("b")
        assert q.pop() == "a"
        assert q.peek() == "b"

    def test_zero_capacity_rejected(self):
        """Test capacity must be positive."""
        with pytest.raises(ValueError):
            ClockedQueue(0)

    @settings(max_examples=50)
    @given(st.integers(1, 8), st.lists(st.one_of(st.integers(0, 1000), st.none()), max_size=300))
    def test_matches_reference_list(self, capacity, ops):
        """Test against a bounded list model (None means pop)."""
        q: ClockedQueue[int] = ClockedQueue(capacity)
        model: list[int] = []
        for op in ops:
            if op is None:
                if model:
                    assert q.pop() == model.pop(0)
                else:
                    assert q.peek() is None
            else:
                accepted = q.push(op)
                assert accepted == (len(model) < capacity)
                if accepted:
                    model.append(op)
            assert len(q) <= capacity
            assert list(q) == model


class TestSeededRng:
    """Tests for SeededRng."""

    def test_same_seed_same_stream(self):
        """Test determinism."""
        assert SeededRng(5).key(8) == SeededRng(5).key(8)

    def test_children_independent_of_each_other(self):
        """Test named children do not depend on creation order."""
        root = SeededRng(9)
        a1 = root.child("a").integers(0, 1 << 30)
        root.child("b")
        a2 = SeededRng(9).child("a").integers(0, 1 << 30)
        assert a1 == a2
        assert root.child("a").seed != root.child("b").seed
