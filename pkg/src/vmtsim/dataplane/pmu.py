"""Physical Match Unit.

An asynchronous, non-blocking LRU CAM shard. Each PMU runs on its own clock
(a ratio of the pipeline clock), pops requests from Q_r, answers hits on Q_p,
and on a miss pushes both an early miss notification to Q_p and the request
to Q_m toward the external lookup unit.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any

from vmtsim.config import PmuConfig
from vmtsim.core import (
    NOT_FOUND,
    ActionRef,
    ByteMask,
    ClockedQueue,
    Key,
    LookupRequest,
    LookupResponse,
    ProtocolFault,
)
from vmtsim.dataplane.base import ClockedUnit
from vmtsim.utils.cache import CamBlock

logger = logging.getLogger(__name__)


class PmuStateKind(str, Enum):
    """Allocation FSM states."""

    FREE = "free"
    TRANSIENT = "transient"
    ASSOCIATED = "associated"


@dataclass(frozen=True, slots=True)
class PmuState:
    """FSM state; ``vmt_id`` and ``mask`` are set when associated (vmt_id kept while transient)."""

    kind: PmuStateKind
    vmt_id: int | None = None
    mask: ByteMask | None = None

    @classmethod
    def free(cls) -> PmuState:
        return cls(PmuStateKind.FREE)

    @classmethod
    def associated(cls, vmt_id: int, mask: ByteMask) -> PmuState:
        return cls(PmuStateKind.ASSOCIATED, vmt_id, mask)

    @classmethod
    def transient(cls) -> PmuState:
        return cls(PmuStateKind.TRANSIENT)


@dataclass(slots=True)
class _InFlight:
    done: int
    request: LookupRequest
    action: ActionRef | None


class Pmu(ClockedUnit):
    """One PMU with its CAM block, queues and FSM."""

    def __init__(self, pmu_id: int, config: PmuConfig) -> None:
        self.pmu_id = pmu_id
        self.config = config
        self.block = CamBlock(config.block_size)
        self.ratio = Fraction(config.clock_ratio).limit_denominator(1000)
        self.q_r: ClockedQueue[LookupRequest] = ClockedQueue(config.request_queue, f"pmu{pmu_id}.Q_r")
        self.q_p: ClockedQueue[LookupResponse] = ClockedQueue(config.response_queue, f"pmu{pmu_id}.Q_p")
        self.q_m: ClockedQueue[LookupRequest] = ClockedQueue(config.miss_queue, f"pmu{pmu_id}.Q_m")
        self.state = PmuState.free()
        self._vmt_id: int | None = None
        self._pipeline: deque[_InFlight] = deque()
        self._next_start = 0
        self.outstanding_misses: set[int] = set()
        self.inbound = 0
        self.lookups = 0
        self.hits = 0
        self.misses = 0
        self.fills = 0
        self.stall_cycles = 0

    @property
    def unit_name(self) -> str:
        return f"pmu{self.pmu_id}"

    @property
    def vmt_id(self) -> int | None:
        """VMT served now (associated) or still being drained (transient)."""
        return self._vmt_id

    # -- FSM ---------------------------------------------------------------

    def drained(self) -> bool:
        """No queued, in-flight or unresolved work remains."""
        return (
            not self.q_r
            and not self._pipeline
            and not self.q_p
            and not self.q_m
            and not self.outstanding_misses
            and self.inbound == 0
        )

    def set_state(self, target: PmuState) -> bool:
        """Apply a legal FSM transition.

        associated -> transient, transient -> free (only once drained) and
        free -> associated (flushes the CAM and installs the mask).

        Returns:
            Whether the transition was accepted
        """
        current = self.state.kind
        if current == PmuStateKind.ASSOCIATED and target.kind == PmuStateKind.TRANSIENT:
            self.state = PmuState(PmuStateKind.TRANSIENT, self._vmt_id, self.state.mask)
        elif current == PmuStateKind.TRANSIENT and target.kind == PmuStateKind.FREE:
            if not self.drained():
                return False
            self.state = PmuState.free()
            self._vmt_id = None
        elif current == PmuStateKind.FREE and target.kind == PmuStateKind.ASSOCIATED:
            if target.vmt_id is None or target.mask is None:
                return False
            self.block.flush(target.mask)
            self.state = target
            self._vmt_id = target.vmt_id
        else:
            return False
        logger.debug("pmu%d -> %s", self.pmu_id, self.state.kind.value)
        return True

    def accepts(self, vmt_id: int) -> bool:
        """Whether a request from ``vmt_id`` may enter Q_r."""
        if self.state.kind == PmuStateKind.FREE:
            return False
        return self._vmt_id == vmt_id

    def try_release(self) -> bool:
        """transient -> free once drained."""
        if self.state.kind == PmuStateKind.TRANSIENT:
            return self.set_state(PmuState.free())
        return False

    # -- data path ---------------------------------------------------------

    def local_ticks(self, cycle: int) -> range:
        """Local cycle indices that fall within pipeline cycle ``cycle``."""
        lo = (cycle * self.ratio.numerator) // self.ratio.denominator
        hi = ((cycle + 1) * self.ratio.numerator) // self.ratio.denominator
        return range(lo, hi)

    def tick(self, cycle: int) -> None:
        """Advance this PMU through the local cycles of pipeline cycle ``cycle``."""
        ticks = self.local_ticks(cycle)
        if not ticks and self.q_r:
            self.stall_cycles += 1
        for local in ticks:
            self._complete(local)
            self._start(local)

    def _complete(self, local: int) -> None:
        while self._pipeline and self._pipeline[0].done <= local:
            item = self._pipeline.popleft()
            req = item.request
            if item.action is not None:
                self.q_p.push(LookupResponse(req.req_id, item.action, True, req.vmt_id, self.pmu_id))
            else:
                self.q_m.push(req)
                self.q_p.push(LookupResponse(req.req_id, NOT_FOUND, False, req.vmt_id, self.pmu_id))
                self.outstanding_misses.add(req.req_id)

    def _start(self, local: int) -> None:
        if local < self._next_start or not self.q_r:
            return
        reserved = len(self._pipeline) + 1
        if self.q_p.free < reserved or self.q_m.free < reserved:
            self.stall_cycles += 1
            return
        req = self.q_r.pop()
        action = self.block.lookup(req.key, req.mask)
        self.lookups += 1
        if action is None:
            self.misses += 1
        else:
            self.hits += 1
        self._pipeline.append(_InFlight(local + self.config.lookup_latency, req, action))
        self._next_start = local + self.config.initiation_interval

    def can_accept_resolution(self) -> bool:
        return self.q_p.free > len(self._pipeline)

    def fill(self, key: Key, action: ActionRef) -> None:
        """Cache an ELU resolution (NOT_FOUND only with negative caching)."""
        if action == NOT_FOUND and not self.config.negative_caching:
            return
        if self.state.kind == PmuStateKind.ASSOCIATED:
            self.block.insert(key, action)
            self.fills += 1

    def resolve(self, req_id: int, key: Key, action: ActionRef, vmt_id: int) -> None:
        """Fill the CAM with a miss resolution and answer the VMT on Q_p."""
        if req_id not in self.outstanding_misses:
            raise ProtocolFault("Resolution for a request this PMU did not miss", self.unit_name, req_id)
        if action == NOT_FOUND:
            raise ProtocolFault("Miss resolved to NOT_FOUND", self.unit_name, req_id)
        self.outstanding_misses.discard(req_id)
        self.fill(key, action)
        if not self.q_p.push(LookupResponse(req_id, action, True, vmt_id, self.pmu_id)):
            raise ProtocolFault("Q_p overflow on resolution", self.unit_name, req_id)

    # -- reporting ---------------------------------------------------------

    def idle(self) -> bool:
        return not self.q_r and not self._pipeline and not self.q_p and not self.q_m

    def diagnostics(self) -> dict[str, Any]:
        return {
            "state": self.state.kind.value,
            "vmt": self._vmt_id,
            "Q_r": len(self.q_r),
            "Q_p": len(self.q_p),
            "Q_m": len(self.q_m),
            "in_pipeline": len(self._pipeline),
            "outstanding_misses": len(self.outstanding_misses),
            "inbound": self.inbound,
        }

    def stats(self) -> dict[str, Any]:
        return {
            "lookups": self.lookups,
            "hits": self.hits,
            "misses": self.misses,
            "fills": self.fills,
            "stall_cycles": self.stall_cycles,
        }


def pmu_tick(pmu: Pmu, cycle: int) -> None:
    pmu.tick(cycle)


def pmu_fill(pmu: Pmu, req_id: int, key: Key, action: ActionRef) -> None:
    pmu.outstanding_misses.discard(req_id)
    pmu.fill(key, action)


def pmu_set_state(pmu: Pmu, target: PmuState) -> bool:
    return pmu.set_state(target)
