"""Tests for the request network and the response bus."""

from __future__ import annotations

import pytest

from vmtsim.config import InterconnectConfig, PmuConfig
from vmtsim.core import ByteMask, Key, LookupRequest, LookupResponse
from vmtsim.dataplane.interconnect import ChannelMap, Interconnect, ResponseBus, route_request, route_response
from vmtsim.dataplane.pmu import Pmu, PmuState

FULL = ByteMask.full(4)


def make_pmus(n: int, owner=lambda i: 0, **overrides) -> list[Pmu]:
    pmus = []
    for i in range(n):
        pmu = Pmu(i, PmuConfig(**overrides))
        pmu.set_state(PmuState.associated(owner(i), FULL))
        pmus.append(pmu)
    return pmus


def request(req_id: int, pmu_id: int, vmt_id: int = 0) -> LookupRequest:
    return LookupRequest(req_id, Key.from_int(req_id, 4), FULL, vmt_id, pmu_id)


class TestChannelMap:
    """Tests for ChannelMap."""

    def test_contiguous_partition(self):
        """Test PMUs are split into contiguous blocks."""
        cmap = ChannelMap(8, 4)
        assert [cmap.channel_of(p) for p in range(8)] == [0, 0, 1, 1, 2, 2, 3, 3]
        assert list(cmap.members(3)) == [6, 7]

    def test_uneven_partition_covers_all(self):
        """Test every PMU lands in exactly one channel."""
        cmap = ChannelMap(10, 4)
        members = [p for ch in range(cmap.channels) for p in cmap.members(ch)]
        assert members == list(range(10))

    def test_more_channels_than_pmus(self):
        """Test channel count is capped at the PMU count."""
        assert ChannelMap(2, 8).channels == 2

    def test_invalid(self):
        """Test out-of-range ids and sizes are rejected."""
        with pytest.raises(ValueError):
            ChannelMap(0, 1)
        with pytest.raises(ValueError):
            ChannelMap(4, 2).channel_of(4)


class TestRouteRequest:
    """Tests for per-channel arbitration."""

    def test_different_channels_both_delivered(self):
        """Test requests to different channels are granted together."""
        pmus = make_pmus(8, owner=lambda i: i // 2)
        net = Interconnect(8, InterconnectConfig(channels=4))
        net.offer(request(1, 0, vmt_id=0))
        net.offer(request(2, 2, vmt_id=1))
        granted = net.route(pmus, 0)
        assert {r.req_id for r in granted} == {1, 2}

    def test_same_channel_one_deferred(self):
        """Test two requests into one channel take two cycles."""
        pmus = make_pmus(8)
        net = Interconnect(8, InterconnectConfig(channels=4))
        net.offer(request(1, 0))
        net.offer(request(2, 1))
        assert [r.req_id for r in net.route(pmus, 0)] == [1]
        assert net.in_flight() == 1
        assert net.deferrals == 1
        assert [r.req_id for r in net.route(pmus, 1)] == [2]
        assert net.idle()

    def test_deferred_before_new_arrival(self):
        """Test a deferred request wins over a new arrival."""
        pmus = make_pmus(8)
        net = Interconnect(8, InterconnectConfig(channels=4))
        net.offer(request(1, 0))
        net.offer(request(2, 1))
        net.route(pmus, 0)
        net.offer(request(3, 0))
        assert [r.req_id for r in net.route(pmus, 1)] == [2]
        assert [r.req_id for r in net.route(pmus, 2)] == [3]

    def test_full_queue_stays_deferred(self):
        """Test a request to a full Q_r is held and a later one may pass it."""
        pmus = make_pmus(8, request_queue=1)
        pmus[0].q_r.push(request(99, 0))
        net = Interconnect(8, InterconnectConfig(channels=4))
        net.offer(request(1, 0))
        net.offer(request(2, 1))
        assert [r.req_id for r in net.route(pmus, 0)] == [2]
        assert net.pending_for(0) == 1
        pmus[0].q_r.pop()
        assert [r.req_id for r in net.route(pmus, 1)] == [1]
        assert net.pending_for(0) == 0

    def test_wrong_owner_not_delivered(self):
        """Test a PMU owned by another VMT does not take the request."""
        pmus = make_pmus(4, owner=lambda i: 1)
        net = Interconnect(4, InterconnectConfig(channels=4))
        assert not route_request(net, request(1, 0, vmt_id=0), pmus, 0)
        assert net.in_flight() == 1

    def test_backpressure(self):
        """Test a full deferred FIFO refuses new requests."""
        net = Interconnect(4, InterconnectConfig(channels=1, deferred_depth=2))
        assert net.offer(request(1, 0))
        assert net.offer(request(2, 1))
        assert not net.offer(request(3, 2))
        assert net.offered == 2

    def test_conservation(self):
        """Test delivered plus in-flight always equals offered."""
        pmus = make_pmus(8, request_queue=64)
        net = Interconnect(8, InterconnectConfig(channels=2))
        req_id = 0
        for cycle in range(20):
            for pmu_id in (0, 1, 5):
                net.offer(request(req_id, pmu_id))
                req_id += 1
            granted = net.route(pmus, cycle)
            assert len(granted) <= 2
            assert net.delivered + net.in_flight() == net.offered


class TestResponseBus:
    """Tests for the response bus."""

    def test_fixed_latency(self):
        """Test a response arrives one cycle after it is sent."""
        bus = ResponseBus(latency=1)
        route_response(bus, LookupResponse(1, 5, True, 0, 0), 10)
        assert bus.deliver(10) == []
        assert [r.req_id for r in bus.deliver(11)] == [1]
        assert bus.idle()

    def test_collect_preserves_order(self):
        """Test responses from every PMU are carried in Q_p order."""
        pmus = make_pmus(2, owner=lambda i: i)
        pmus[0].q_p.push(LookupResponse(1, 5, True, 0, 0))
        pmus[0].q_p.push(LookupResponse(2, 6, True, 0, 0))
        pmus[1].q_p.push(LookupResponse(3, 7, True, 1, 1))
        bus = ResponseBus()
        assert bus.collect(pmus, 0) == 3
        delivered = bus.deliver(1)
        assert [r.req_id for r in delivered] == [1, 2, 3]
        assert {r.vmt_id for r in delivered} == {0, 1}
        assert bus.carried == 3
