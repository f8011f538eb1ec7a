"""Run metrics and per-window time series."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from vmtsim.dataplane.elu import memory_bandwidth

LOG2_BUCKETS = 64


class LatencyHistogram:
    """Per-key latency in cycles: log-2 buckets plus the raw samples for exact percentiles."""

    def __init__(self) -> None:
        self.buckets = [0] * LOG2_BUCKETS
        self._samples: list[int] = []

    def record(self, cycles: int) -> None:
        if cycles < 0:
            raise ValueError(f"Negative latency {cycles}")
        self.buckets[min(cycles.bit_length(), LOG2_BUCKETS - 1)] += 1
        self._samples.append(cycles)

    @property
    def count(self) -> int:
        return len(self._samples)

    def percentile(self, q: float) -> float:
        if not self._samples:
            return 0.0
        return float(np.percentile(np.asarray(self._samples), q, method="nearest"))

    def mean(self) -> float:
        return float(np.mean(self._samples)) if self._samples else 0.0

    def to_dict(self) -> dict[str, Any]:
        last = max((i for i, c in enumerate(self.buckets) if c), default=-1)
        return {
            "count": self.count,
            "mean": self.mean(),
            "p50": self.percentile(50),
            "p95": self.percentile(95),
            "p99": self.percentile(99),
            "max": max(self._samples, default=0),
            "log2_buckets": self.buckets[: last + 1],
        }


@dataclass
class WindowSample:
    """Counters of one statistics window."""

    window: int
    start_cycle: int
    cycles: int
    injected: int = 0
    emitted: int = 0
    hits: int = 0
    misses: int = 0
    defaults: int = 0
    mem_reads: int = 0
    stall_cycles: int = 0
    active_pmus: int = 0
    throughput_pps: float = 0.0
    offered_pps: float = 0.0
    vmt_pmus: dict[int, int] = field(default_factory=dict)
    vmt_in: dict[int, int] = field(default_factory=dict)
    vmt_out: dict[int, int] = field(default_factory=dict)

    @property
    def hit_rate(self) -> float:
        lookups = self.hits + self.misses
        return self.hits / lookups if lookups else 0.0

    def row(self) -> dict[str, Any]:
        return {
            "window": self.window,
            "start_cycle": self.start_cycle,
            "injected": self.injected,
            "emitted": self.emitted,
            "hits": self.hits,
            "misses": self.misses,
            "hit_rate": self.hit_rate,
            "throughput_pps": self.throughput_pps,
            "mem_reads": self.mem_reads,
            "active_pmus": self.active_pmus,
            "stall_cycles": self.stall_cycles,
        }


@dataclass
class VmtMetrics:
    hits: int = 0
    misses: int = 0
    defaults: int = 0
    stall_cycles: int = 0
    reordered: int = 0
    await_out_of_order: int = 0

    @property
    def hit_rate(self) -> float:
        lookups = self.hits + self.misses
        return self.hits / lookups if lookups else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self), "hit_rate": self.hit_rate}


@dataclass
class Metrics:
    """Summary of one run."""

    cycles: int = 0
    cycle_ns: float = 4.0
    injected: int = 0
    emitted: int = 0
    dropped: int = 0
    in_flight: int = 0
    mem_reads: int = 0
    node_bytes: int = 64
    power_proxy: int = 0
    reallocations: int = 0
    opt_runs: int = 0
    vmts: dict[int, VmtMetrics] = field(default_factory=dict)
    latency: LatencyHistogram = field(default_factory=LatencyHistogram)
    trie_footprint: dict[int, dict[str, int]] = field(default_factory=dict)
    hardware_cost: dict[str, int] = field(default_factory=dict)
    usl_fit: dict[int, dict[str, float]] = field(default_factory=dict)

    @property
    def elapsed_s(self) -> float:
        return self.cycles * self.cycle_ns * 1e-9

    @property
    def hits(self) -> int:
        return sum(v.hits for v in self.vmts.values())

    @property
    def misses(self) -> int:
        return sum(v.misses for v in self.vmts.values())

    @property
    def hit_rate(self) -> float:
        lookups = self.hits + self.misses
        return self.hits / lookups if lookups else 0.0

    @property
    def throughput_pps(self) -> float:
        return self.emitted / self.elapsed_s if self.cycles else 0.0

    @property
    def mem_gbps(self) -> float:
        if self.cycles <= 0:
            return 0.0
        return memory_bandwidth(self.mem_reads, self.cycles, self.node_bytes, self.cycle_ns)

    @property
    def stall_cycles(self) -> int:
        return sum(v.stall_cycles for v in self.vmts.values())

    @property
    def reordered(self) -> int:
        return sum(v.reordered for v in self.vmts.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycles": self.cycles,
            "elapsed_ns": self.cycles * self.cycle_ns,
            "injected": self.injected,
            "emitted": self.emitted,
            "dropped": self.dropped,
            "in_flight": self.in_flight,
            "hits": self.hits,
            "misses": self.misses,
            "hit_rate": self.hit_rate,
            "throughput_pps": self.throughput_pps,
            "mem_reads": self.mem_reads,
            "mem_gbps": self.mem_gbps,
            "reordered": self.reordered,
            "stall_cycles": self.stall_cycles,
            "power_proxy": self.power_proxy,
            "reallocations": self.reallocations,
            "opt_runs": self.opt_runs,
            "latency": self.latency.to_dict(),
            "vmts": {str(k): v.to_dict() for k, v in sorted(self.vmts.items())},
            "trie_footprint": {str(k): v for k, v in sorted(self.trie_footprint.items())},
            "hardware_cost": self.hardware_cost,
            "usl_fit": {str(k): v for k, v in sorted(self.usl_fit.items())},
        }
