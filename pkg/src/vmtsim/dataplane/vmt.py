"""Virtual Match Table.

Steers keys to PMUs through a consistent-hash lookup table, produces lookup
requests, and consumes PMU responses. An early miss notification parks the
PHV in the await FIFO until the in-order ELU resolution arrives. Responses
are correlated with PHVs by request id.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass
from typing import Any

from vmtsim.config import VmtConfig
from vmtsim.core import (
    NOT_FOUND,
    ActionRef,
    ByteMask,
    ClockedQueue,
    Key,
    LookupRequest,
    LookupResponse,
    Phv,
    ProtocolFault,
)
from vmtsim.dataplane.base import ClockedUnit
from vmtsim.utils.hashing import RING_SIZE, HashRing, hash32

logger = logging.getLogger(__name__)

INVALID = -1


@dataclass
class LookupTable:
    """2^N-entry table mapping hash buckets to PMU ids (INVALID when unowned)."""

    entries: list[int]
    vnodes: int = 64
    salt: int = 0

    @property
    def size(self) -> int:
        return len(self.entries)

    def valid(self, bucket: int) -> bool:
        return self.entries[bucket] != INVALID

    def owners(self) -> set[int]:
        return {e for e in self.entries if e != INVALID}


def _bucket_position(i: int, v: int) -> int:
    return i * RING_SIZE // v


def build_lookup_table(pmus: Iterable[int], v: int, vnodes: int = 64, salt: int = 0) -> LookupTable:
    """Assign each bucket to the nearest clockwise virtual node of ``pmus``.

    Raises:
        ValueError: If ``v`` is not a power of two
    """
    if v < 1 or v & (v - 1):
        raise ValueError(f"Lookup table size {v} is not a power of two")
    ring = HashRing(pmus, vnodes=vnodes, salt=salt)
    entries: list[int] = []
    for i in range(v):
        owner = ring.owner(_bucket_position(i, v))
        entries.append(INVALID if owner is None else owner)
    return LookupTable(entries, vnodes, salt)


def update_lookup_table(table: LookupTable, old_set: Iterable[int], new_set: Iterable[int]) -> list[int]:
    """Rewrite ``table`` for ``new_set`` in place.

    Returns:
        Indices of the buckets whose owner changed
    """
    new_members = set(new_set)
    if set(old_set) == new_members:
        return []
    fresh = build_lookup_table(new_members, table.size, table.vnodes, table.salt)
    changed = [i for i, (a, b) in enumerate(zip(table.entries, fresh.entries)) if a != b]
    for i in changed:
        table.entries[i] = fresh.entries[i]
    return changed


def classify_key(table: LookupTable, key: Key) -> int | None:
    """PMU id owning ``key``'s bucket, or None for the default-action path."""
    owner = table.entries[hash32(key.data) % table.size]
    return None if owner == INVALID else owner


def apply_action(phv: Phv, vmt_id: int, action: ActionRef) -> Phv:
    """Annotate ``phv`` with the action selected at ``vmt_id``."""
    if action == NOT_FOUND:
        raise ProtocolFault(f"NOT_FOUND reached apply_action at VMT {vmt_id}", unit=f"vmt{vmt_id}")
    phv.actions[vmt_id] = action
    return phv


@dataclass(slots=True)
class Outstanding:
    """A PHV with a lookup in flight."""

    phv: Phv
    pmu_id: int
    issue_cycle: int
    seq: int
    buffered: bool = False
    hit: bool = True


@dataclass(slots=True)
class Emission:
    """A PHV leaving the VMT with its action attached."""

    phv: Phv
    action: ActionRef
    latency: int
    outcome: str  # "hit", "miss" or "default"


class ReqIdSource:
    """Engine-wide request id counter."""

    def __init__(self) -> None:
        self._next = 0

    def __call__(self) -> int:
        value = self._next
        self._next += 1
        return value


class Vmt(ClockedUnit):
    """One virtual match table and its shared await structure."""

    def __init__(
        self,
        config: VmtConfig,
        req_ids: ReqIdSource | None = None,
        input_depth: int = 64,
        strict_order: bool = False,
        salt: int = 0,
    ) -> None:
        self.config = config
        self.vmt_id = config.id
        self.key_width = config.key_width
        self.mask = ByteMask.full(config.key_width)
        self.table = build_lookup_table((), 1 << config.table_bits, config.vnodes, salt)
        self.pmus: set[int] = set()
        self.req_ids = req_ids or ReqIdSource()
        self.input: ClockedQueue[Phv] = ClockedQueue(input_depth, f"vmt{self.vmt_id}.in")
        self.output: ClockedQueue[Phv] = ClockedQueue(input_depth, f"vmt{self.vmt_id}.out")
        self.strict_order = strict_order
        self.outstanding: dict[int, Outstanding] = {}
        self.await_fifo: deque[int] = deque()
        self._seq = 0
        self._next_emit_seq = 0
        self._held: list[tuple[int, int, Emission]] = []
        self._max_emitted_seq = -1
        self.hits = 0
        self.misses = 0
        self.defaults = 0
        self.stall_cycles = 0
        self.reordered = 0
        self.await_out_of_order = 0
        self.produced = 0
        self.emitted = 0

    @property
    def unit_name(self) -> str:
        return f"vmt{self.vmt_id}"

    @property
    def await_capacity(self) -> int:
        return self.config.await_depth

    def await_full(self) -> bool:
        return len(self.outstanding) >= self.config.await_depth

    def has_output_credit(self) -> bool:
        """Whether one more PHV can be admitted without overrunning the output FIFO.

        Every outstanding or held PHV owns a reserved output slot, so an
        emission always finds room.
        """
        return len(self.outstanding) + len(self._held) + len(self.output) < self.output.capacity

    # -- association -------------------------------------------------------

    def set_pmus(self, pmus: Iterable[int]) -> list[int]:
        """Change the associated PMU set; returns the changed buckets."""
        new_set = set(pmus)
        changed = update_lookup_table(self.table, self.pmus, new_set)
        self.pmus = new_set
        if changed:
            logger.debug("vmt%d: %d buckets remapped, pmus=%s", self.vmt_id, len(changed), sorted(new_set))
        return changed

    # -- produce -----------------------------------------------------------

    def key_of(self, phv: Phv) -> Key:
        key = phv.keys.get(self.vmt_id)
        if key is None:
            raise ProtocolFault(f"PHV {phv.phv_id} carries no key for VMT {self.vmt_id}", self.unit_name)
        return key.resized(self.key_width)

    def classify(self, phv: Phv) -> int | None:
        return classify_key(self.table, self.key_of(phv))

    def produce_request(self, phv: Phv, pmu_id: int, cycle: int) -> LookupRequest | None:
        """Record ``phv`` as outstanding and build its request; None when stalled."""
        if self.await_full():
            return None
        req = LookupRequest(self.req_ids(), self.key_of(phv), self.mask, self.vmt_id, pmu_id, cycle)
        self.outstanding[req.req_id] = Outstanding(phv, pmu_id, cycle, self._seq)
        self._seq += 1
        self.produced += 1
        return req

    def emit_default(self, phv: Phv, cycle: int) -> list[Emission]:
        """Send ``phv`` down the default-action path (no valid lookup table entry)."""
        self.defaults += 1
        seq = self._seq
        self._seq += 1
        apply_action(phv, self.vmt_id, self.config.default_action)
        return self._emit(Emission(phv, self.config.default_action, 0, "default"), seq)

    # -- consume -----------------------------------------------------------

    def consume_response(self, resp: LookupResponse, cycle: int) -> list[Emission]:
        """Handle a PMU response.

        A miss notification parks the PHV in the await FIFO. A valid response
        either completes an un-parked PHV (hit) or resolves a parked one.

        Raises:
            ProtocolFault: On an unknown request id or a duplicate notification
        """
        record = self.outstanding.get(resp.req_id)
        if record is None:
            raise ProtocolFault("Response for unknown request", self.unit_name, resp.req_id)

        if not resp.valid:
            if record.buffered:
                raise ProtocolFault("Duplicate miss notification", self.unit_name, resp.req_id)
            record.buffered = True
            record.hit = False
            self.await_fifo.append(resp.req_id)
            self.misses += 1
            return []

        del self.outstanding[resp.req_id]
        if record.buffered:
            if self.await_fifo[0] == resp.req_id:
                self.await_fifo.popleft()
            else:
                self.await_out_of_order += 1
                self.await_fifo.remove(resp.req_id)
                logger.debug("vmt%d: resolution %d not at await front", self.vmt_id, resp.req_id)
            outcome = "miss"
        else:
            self.hits += 1
            outcome = "hit"
        apply_action(record.phv, self.vmt_id, resp.action)
        return self._emit(
            Emission(record.phv, resp.action, cycle - record.issue_cycle, outcome), record.seq
        )

    def _emit(self, emission: Emission, seq: int) -> list[Emission]:
        if not self.strict_order:
            if seq < self._max_emitted_seq:
                self.reordered += 1
            self._max_emitted_seq = max(self._max_emitted_seq, seq)
            self.emitted += 1
            return [emission]
        heapq.heappush(self._held, (seq, id(emission), emission))
        out: list[Emission] = []
        while self._held and self._held[0][0] == self._next_emit_seq:
            out.append(heapq.heappop(self._held)[2])
            self._next_emit_seq += 1
        self.emitted += len(out)
        return out

    # -- reporting ---------------------------------------------------------

    def idle(self) -> bool:
        return not self.input and not self.output and not self.outstanding and not self._held

    def diagnostics(self) -> dict[str, Any]:
        return {
            "input": len(self.input),
            "output": len(self.output),
            "outstanding": len(self.outstanding),
            "await": len(self.await_fifo),
            "held": len(self._held),
            "pmus": sorted(self.pmus),
        }

    def stats(self) -> dict[str, Any]:
        lookups = self.hits + self.misses
        return {
            "hits": self.hits,
            "misses": self.misses,
            "defaults": self.defaults,
            "hit_rate": self.hits / lookups if lookups else 0.0,
            "stall_cycles": self.stall_cycles,
            "reordered": self.reordered,
            "await_out_of_order": self.await_out_of_order,
        }


def produce_request(vmt: Vmt, phv: Phv, pmu_id: int, cycle: int = 0) -> LookupRequest | None:
    return vmt.produce_request(phv, pmu_id, cycle)


def consume_response(vmt: Vmt, resp: LookupResponse, cycle: int = 0) -> list[Emission]:
    return vmt.consume_response(resp, cycle)
