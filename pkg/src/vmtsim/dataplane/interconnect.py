"""Segmented-channel request network and the response bus.

PMUs are split into C contiguous channels. Each channel grants at most one
request per cycle: the oldest deferred request first, then new arrivals in
VMT-index order. Responses travel on a contention-free bus with a fixed
latency.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, deque
from collections.abc import Sequence
from typing import Any

from vmtsim.config import InterconnectConfig
from vmtsim.core import LookupRequest, LookupResponse
from vmtsim.dataplane.base import ClockedUnit
from vmtsim.dataplane.pmu import Pmu

logger = logging.getLogger(__name__)


class ChannelMap:
    """Contiguous partition of PMU ids into channels."""

    def __init__(self, pmu_count: int, channels: int) -> None:
        if pmu_count < 1 or channels < 1:
            raise ValueError("pmu_count and channels must be >= 1")
        self.pmu_count = pmu_count
        self.channels = min(channels, pmu_count)
        self.span = math.ceil(pmu_count / self.channels)

    def channel_of(self, pmu_id: int) -> int:
        if not 0 <= pmu_id < self.pmu_count:
            raise ValueError(f"PMU id {pmu_id} outside [0, {self.pmu_count})")
        return pmu_id // self.span

    def members(self, channel: int) -> range:
        return range(channel * self.span, min((channel + 1) * self.span, self.pmu_count))


class Interconnect(ClockedUnit):
    """VMT-to-PMU request network with per-channel single-grant arbitration."""

    def __init__(self, pmu_count: int, config: InterconnectConfig) -> None:
        self.config = config
        self.channel_map = ChannelMap(pmu_count, config.channels)
        n = self.channel_map.channels
        self._deferred: list[deque[LookupRequest]] = [deque() for _ in range(n)]
        self._arrivals: list[list[LookupRequest]] = [[] for _ in range(n)]
        self._targets: Counter[int] = Counter()
        self.offered = 0
        self.delivered = 0
        self.deferrals = 0

    @property
    def unit_name(self) -> str:
        return "interconnect"

    def has_room(self, pmu_id: int) -> bool:
        ch = self.channel_map.channel_of(pmu_id)
        return len(self._deferred[ch]) + len(self._arrivals[ch]) < self.config.deferred_depth

    def offer(self, req: LookupRequest) -> bool:
        """Enter a new request for this cycle; False applies backpressure to the producer."""
        if not self.has_room(req.pmu_id):
            return False
        self._arrivals[self.channel_map.channel_of(req.pmu_id)].append(req)
        self._targets[req.pmu_id] += 1
        self.offered += 1
        return True

    def pending_for(self, pmu_id: int) -> int:
        """Requests inside the network targeting ``pmu_id``."""
        return self._targets[pmu_id]

    def route(self, pmus: Sequence[Pmu], cycle: int) -> list[LookupRequest]:
        """Grant at most one request per channel into its target PMU's Q_r.

        Candidates are scanned oldest first; one whose target cannot take it
        (full Q_r) stays deferred.
        """
        granted: list[LookupRequest] = []
        for ch in range(self.channel_map.channels):
            queue = self._deferred[ch]
            queue.extend(self._arrivals[ch])
            self._arrivals[ch].clear()
            for i, req in enumerate(queue):
                pmu = pmus[req.pmu_id]
                if pmu.accepts(req.vmt_id) and not pmu.q_r.full():
                    pmu.q_r.push(req)
                    del queue[i]
                    self._targets[req.pmu_id] -= 1
                    granted.append(req)
                    self.delivered += 1
                    break
            self.deferrals += len(queue)
        return granted

    def in_flight(self) -> int:
        return sum(len(q) for q in self._deferred) + sum(len(a) for a in self._arrivals)

    def idle(self) -> bool:
        return self.in_flight() == 0

    def diagnostics(self) -> dict[str, Any]:
        return {f"deferred[{ch}]": len(q) for ch, q in enumerate(self._deferred) if q}

    def stats(self) -> dict[str, Any]:
        return {"offered": self.offered, "delivered": self.delivered, "deferrals": self.deferrals}


def route_request(net: Interconnect, req: LookupRequest, pmus: Sequence[Pmu], cycle: int) -> bool:
    """Offer one request and arbitrate; True if it was delivered this cycle."""
    if not net.offer(req):
        return False
    return req in net.route(pmus, cycle)


class ResponseBus(ClockedUnit):
    """Contention-free PMU-to-VMT response bus with fixed latency."""

    def __init__(self, latency: int = 1) -> None:
        self.latency = latency
        self._in_flight: deque[tuple[int, LookupResponse]] = deque()
        self.carried = 0

    @property
    def unit_name(self) -> str:
        return "response-bus"

    def send(self, resp: LookupResponse, cycle: int) -> None:
        self._in_flight.append((cycle + self.latency, resp))
        self.carried += 1

    def collect(self, pmus: Sequence[Pmu], cycle: int) -> int:
        """Drain every PMU's Q_p onto the bus."""
        moved = 0
        for pmu in pmus:
            while pmu.q_p:
                self.send(pmu.q_p.pop(), cycle)
                moved += 1
        return moved

    def deliver(self, cycle: int) -> list[LookupResponse]:
        """Responses arriving at their VMTs this cycle, in send order."""
        out: list[LookupResponse] = []
        while self._in_flight and self._in_flight[0][0] <= cycle:
            out.append(self._in_flight.popleft()[1])
        return out

    def idle(self) -> bool:
        return not self._in_flight

    def diagnostics(self) -> dict[str, Any]:
        return {"in_flight": len(self._in_flight)}

    def stats(self) -> dict[str, Any]:
        return {"carried": self.carried}


def route_response(bus: ResponseBus, resp: LookupResponse, cycle: int) -> None:
    bus.send(resp, cycle)
