"""External Lookup Unit.

Resolves PMU misses against one trie per VMT policy held in banked external
memory. Requests are registered in the outstanding request buffer (ORB) in
issue order, complete out of order as their memory walks finish, and are
replied strictly in issue order.
"""

from __future__ import annotations

import heapq
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

from vmtsim.config import EluConfig
from vmtsim.core import NOT_FOUND, ActionRef, ClockedQueue, Key, LookupRequest, ProtocolFault
from vmtsim.dataplane.base import ClockedUnit
from vmtsim.utils.rules import FieldSpec, Rule, expand_rules, spine_prune
from vmtsim.utils.trie import Trie, build_trie

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class OrbEntry:
    """One ORB slot."""

    req_id: int
    pmu_id: int
    vmt_id: int
    key: Key
    issue_cycle: int = 0
    action: ActionRef = NOT_FOUND
    valid: bool = False


@dataclass(frozen=True, slots=True)
class Resolution:
    """A miss resolution travelling from the ELU back to the owning PMU."""

    req_id: int
    pmu_id: int
    vmt_id: int
    key: Key
    action: ActionRef


class Orb:
    """Ring buffer with ``commit`` and ``issue`` cursors.

    Cursors are absolute counters; the slot of position ``i`` is ``i % capacity``.
    """

    def __init__(self, capacity: int = 64) -> None:
        if capacity < 1:
            raise ValueError("ORB capacity must be >= 1")
        self.capacity = capacity
        self._ring: list[OrbEntry | None] = [None] * capacity
        self._pos: dict[int, int] = {}
        self.commit = 0
        self.issue = 0

    @property
    def outstanding(self) -> int:
        return self.issue - self.commit

    def full(self) -> bool:
        return self.outstanding >= self.capacity

    def issue_request(self, req: LookupRequest, cycle: int = 0) -> bool:
        """Register ``req`` as invalid at the issue cursor; False when full."""
        if self.full():
            return False
        if req.req_id in self._pos:
            raise ProtocolFault("Duplicate ORB issue", unit="elu", req_id=req.req_id)
        self._ring[self.issue % self.capacity] = OrbEntry(
            req.req_id, req.pmu_id, req.vmt_id, req.key, issue_cycle=cycle
        )
        self._pos[req.req_id] = self.issue
        self.issue += 1
        return True

    def complete(self, req_id: int, action: ActionRef) -> None:
        """Fill the entry's action and raise its valid flag."""
        pos = self._pos.get(req_id)
        if pos is None:
            raise ProtocolFault("Completion for unknown ORB request", unit="elu", req_id=req_id)
        entry = self._ring[pos % self.capacity]
        assert entry is not None
        if entry.valid:
            raise ProtocolFault("Double ORB completion", unit="elu", req_id=req_id)
        entry.action = action
        entry.valid = True

    def commit_ready(self, max_replies: int = 1) -> list[OrbEntry]:
        """Pop up to ``max_replies`` consecutive valid entries from the commit cursor."""
        out: list[OrbEntry] = []
        while len(out) < max_replies and self.commit < self.issue:
            slot = self.commit % self.capacity
            entry = self._ring[slot]
            assert entry is not None
            if not entry.valid:
                break
            out.append(entry)
            self._ring[slot] = None
            del self._pos[entry.req_id]
            self.commit += 1
        return out

    def entries(self) -> list[OrbEntry]:
        """Outstanding entries in issue order."""
        return [
            e for e in (self._ring[i % self.capacity] for i in range(self.commit, self.issue))
            if e is not None
        ]


def orb_issue(orb: Orb, req: LookupRequest) -> bool:
    return orb.issue_request(req)


def orb_complete(orb: Orb, req_id: int, action: ActionRef) -> None:
    orb.complete(req_id, action)


def orb_commit(orb: Orb, drain_width: int = 1) -> list[OrbEntry]:
    return orb.commit_ready(drain_width)


class MemoryModel:
    """Banked external memory with fixed access latency and per-bank initiation interval.

    ``replicas`` copies of every bank can each start one access per II.
    """

    def __init__(
        self,
        n_banks: int = 8,
        latency: int = 50,
        initiation_interval: int = 2,
        node_bytes: int = 64,
        cycle_ns: float = 4.0,
        replicas: int = 1,
        record_starts: bool = False,
    ) -> None:
        self.n_banks = n_banks
        self.latency = latency
        self.initiation_interval = initiation_interval
        self.node_bytes = node_bytes
        self.cycle_ns = cycle_ns
        self._next_free = [[0] * replicas for _ in range(n_banks)]
        self.reads = 0
        self.record_starts = record_starts
        self.starts: list[tuple[int, int]] = []

    def reserve(self, bank: int, earliest: int) -> int:
        """Reserve the earliest access start at or after ``earliest`` on ``bank``."""
        lanes = self._next_free[bank]
        lane = min(range(len(lanes)), key=lambda i: (max(earliest, lanes[i]), i))
        start = max(earliest, lanes[lane])
        lanes[lane] = start + self.initiation_interval
        self.reads += 1
        if self.record_starts:
            self.starts.append((bank, start))
        return start


def memory_bandwidth(
    reads: int, elapsed_cycles: int, node_bytes: int = 64, cycle_ns: float = 4.0
) -> float:
    """External memory bandwidth in GB/s (bytes per nanosecond)."""
    if elapsed_cycles <= 0:
        raise ValueError("elapsed_cycles must be positive")
    return reads * node_bytes / (elapsed_cycles * cycle_ns)


def compile_policy(
    rules: Sequence[Rule],
    fields: Sequence[FieldSpec],
    stride: int = 4,
    n_banks: int = 8,
    default_action: ActionRef = NOT_FOUND,
    bank_offset: int = 0,
) -> Trie:
    """Expand, spine-prune and build the trie for one VMT policy."""
    width = sum(f.width for f in fields)
    prefixes = spine_prune(expand_rules(rules, fields))
    trie = build_trie(prefixes, width, stride, n_banks, default_action, bank_offset)
    logger.debug(
        "Compiled %d rules into %d prefixes, %d trie nodes", len(rules), len(prefixes), trie.node_count
    )
    return trie


class Elu(ClockedUnit):
    """The external lookup unit with its global request/reply queues."""

    def __init__(self, config: EluConfig, tries: dict[int, Trie], cycle_ns: float = 4.0) -> None:
        self.config = config
        self.tries = tries
        self.q_mg: ClockedQueue[LookupRequest] = ClockedQueue(config.request_queue_depth, "Q_m^G")
        self.q_lg: ClockedQueue[Resolution] = ClockedQueue(config.reply_queue_depth, "Q_l^G")
        self.orb = Orb(config.orb_size)
        self.memory = MemoryModel(
            n_banks=config.n_banks,
            latency=config.latency,
            initiation_interval=config.initiation_interval,
            node_bytes=config.node_bytes,
            cycle_ns=cycle_ns,
            replicas=config.replicas,
        )
        self._pending: list[tuple[int, int, int, ActionRef]] = []
        self._seq = 0
        self._rr = 0
        self.issued = 0
        self.replied = 0
        self.resolution_cycles: list[int] = []

    @property
    def unit_name(self) -> str:
        return "elu"

    def collect(self, sources: Sequence[ClockedQueue[LookupRequest]], width: int = 1) -> int:
        """Move up to ``width`` misses from PMU Q_m queues into Q_m^G, round robin."""
        moved = 0
        n = len(sources)
        scanned = 0
        while moved < width and scanned < n and not self.q_mg.full():
            q = sources[self._rr % n]
            self._rr = (self._rr + 1) % n
            scanned += 1
            if q:
                self.q_mg.push(q.pop())
                moved += 1
                scanned = 0
        return moved

    def _schedule(self, req: LookupRequest, cycle: int) -> None:
        trie = self.tries.get(req.vmt_id)
        if trie is None:
            raise ProtocolFault(f"No trie for VMT {req.vmt_id}", unit="elu", req_id=req.req_id)
        action, trace = trie.lookup(req.key)
        t = cycle
        for bank, _level in trace:
            start = self.memory.reserve(bank, t)
            t = start + self.memory.latency
        done = t + self.config.overhead
        heapq.heappush(self._pending, (done, self._seq, req.req_id, action))
        self._seq += 1

    def tick(self, cycle: int) -> None:
        """Issue from Q_m^G, complete finished walks, commit replies to Q_l^G."""
        for _ in range(self.config.issue_width):
            req = self.q_mg.peek()
            if req is None or self.orb.full():
                break
            self.q_mg.pop()
            self.orb.issue_request(req, cycle)
            self._schedule(req, cycle)
            self.issued += 1

        while self._pending and self._pending[0][0] <= cycle:
            _, _, req_id, action = heapq.heappop(self._pending)
            self.orb.complete(req_id, action)

        for entry in self.orb.commit_ready(min(self.config.drain_width, self.q_lg.free)):
            self.q_lg.push(Resolution(entry.req_id, entry.pmu_id, entry.vmt_id, entry.key, entry.action))
            self.resolution_cycles.append(cycle - entry.issue_cycle)
            self.replied += 1

    def next_event(self) -> int | None:
        """Cycle of the next memory completion, if any."""
        return self._pending[0][0] if self._pending else None

    def idle(self) -> bool:
        return not self.q_mg and not self.q_lg and self.orb.outstanding == 0

    def diagnostics(self) -> dict[str, Any]:
        return {
            "Q_m^G": len(self.q_mg),
            "Q_l^G": len(self.q_lg),
            "orb_outstanding": self.orb.outstanding,
            "pending_walks": len(self._pending),
        }

    def stats(self) -> dict[str, Any]:
        return {"issued": self.issued, "replied": self.replied, "memory_reads": self.memory.reads}


def elu_tick(elu: Elu, cycle: int) -> None:
    """Advance ``elu`` one cycle."""
    elu.tick(cycle)
