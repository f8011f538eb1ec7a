"""Synthetic workload generation and trace I/O.

Rulesets follow a prefix-length histogram; flows draw sizes from a flow-size
distribution, start uniformly over the run and emit Poisson packet arrivals
at a rate proportional to their size. Every flow is bound to one rule (Zipf
popularity), hence to one key, and to one path through the CFG.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vmtsim.core import SINK, Key, NodeId, Phv, SeededRng
from vmtsim.optimizer.cfg import CfgGraph
from vmtsim.utils.hashing import RING_SIZE, hash32
from vmtsim.utils.rules import Exact, FieldSpec, Prefix, Range, Rule, RuleError

logger = logging.getLogger(__name__)

TRACE_HEADER = ("time_ns", "flow_id", "vmt_entry_key_hex")
ENUMERATE_LIMIT = 1 << 20

Segment = tuple[int, float]


# -- flow sizes --------------------------------------------------------------


class FlowSizeDistribution:
    """Empirical CDF over flow sizes (packets).

    Sampling is inverse-CDF: a uniform draw ``u`` maps to the first size whose
    cumulative probability exceeds ``u``.
    """

    def __init__(self, sizes: Sequence[float], cdf: Sequence[float], name: str = "empirical") -> None:
        self.sizes = np.asarray(sizes, dtype=np.int64)
        self.cdf = np.asarray(cdf, dtype=float)
        self.name = name
        if len(self.sizes) == 0 or len(self.sizes) != len(self.cdf):
            raise ValueError("CDF needs matching, non-empty size and probability columns")
        if np.any(np.diff(self.sizes) <= 0):
            raise ValueError("CDF sizes must be strictly increasing")
        if np.any(np.diff(self.cdf) < 0) or self.cdf[0] < 0:
            raise ValueError("CDF must be monotone non-decreasing")
        if not math.isclose(float(self.cdf[-1]), 1.0, abs_tol=1e-9):
            raise ValueError(f"CDF must end at 1.0, ends at {self.cdf[-1]}")
        self.cdf[-1] = 1.0

    @classmethod
    def _from_pmf(cls, sizes: np.ndarray, weights: np.ndarray, name: str) -> FlowSizeDistribution:
        cdf = np.cumsum(weights / weights.sum())
        return cls(sizes, cdf, name)

    @classmethod
    def zipf(cls, exponent: float = 1.2, max_size: int = 100_000) -> FlowSizeDistribution:
        sizes = np.arange(1, max_size + 1)
        return cls._from_pmf(sizes, sizes.astype(float) ** -exponent, f"zipf({exponent})")

    @classmethod
    def pareto(cls, shape: float = 1.2, max_size: int = 100_000) -> FlowSizeDistribution:
        """Discretized Pareto with scale 1, truncated at ``max_size``."""
        sizes = np.arange(1, max_size + 1)
        s = sizes.astype(float)
        weights = s**-shape - (s + 1.0) ** -shape
        # tail mass beyond the truncation point lands on max_size
        weights[-1] = s[-1] ** -shape
        return cls._from_pmf(sizes, weights, f"pareto({shape})")

    @classmethod
    def uniform(cls, max_size: int = 100_000) -> FlowSizeDistribution:
        sizes = np.arange(1, max_size + 1)
        return cls._from_pmf(sizes, np.ones(max_size), "uniform")

    @classmethod
    def parse(cls, text: str, name: str = "file") -> FlowSizeDistribution:
        """Parse a ``size,cum_prob`` CSV (header optional)."""
        sizes: list[float] = []
        probs: list[float] = []
        for row in csv.reader(io.StringIO(text)):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                size, prob = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if not sizes:
                    continue
                raise ValueError(f"Malformed CDF row: {row}") from None
            sizes.append(size)
            probs.append(prob)
        return cls(sizes, probs, name)

    @classmethod
    def load(cls, path: Path) -> FlowSizeDistribution:
        return cls.parse(path.read_text(encoding="utf-8"), name=path.name)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        u = gen.random(n)
        idx = np.searchsorted(self.cdf, u, side="right")
        return self.sizes[np.minimum(idx, len(self.sizes) - 1)]

    def mean(self) -> float:
        pmf = np.diff(self.cdf, prepend=0.0)
        return float(np.dot(pmf, self.sizes))


def make_distribution(
    kind: str, param: float = 1.2, max_size: int = 100_000, cdf_file: Path | None = None
) -> FlowSizeDistribution:
    if kind == "zipf":
        return FlowSizeDistribution.zipf(param, max_size)
    if kind == "pareto":
        return FlowSizeDistribution.pareto(param, max_size)
    if kind == "uniform":
        return FlowSizeDistribution.uniform(max_size)
    if kind == "file":
        if cdf_file is None:
            raise ValueError("distribution 'file' needs a CDF file")
        return FlowSizeDistribution.load(cdf_file)
    raise ValueError(f"Unknown flow-size distribution {kind!r}")


# -- rulesets ----------------------------------------------------------------


def apportion(count: int, histogram: Mapping[int, float]) -> dict[int, int]:
    """Split ``count`` by ``histogram`` weights with the largest-remainder method."""
    total = sum(histogram.values())
    if total <= 0:
        raise RuleError("Prefix-length histogram has no positive weight")
    quotas = {length: count * w / total for length, w in histogram.items()}
    out = {length: math.floor(q) for length, q in quotas.items()}
    remainder = count - sum(out.values())
    order = sorted(quotas, key=lambda length: (-(quotas[length] - out[length]), length))
    for length in order[:remainder]:
        out[length] += 1
    return out


def _random_bits(gen: np.random.Generator, bits: int) -> int:
    if bits <= 0:
        return 0
    nbytes = (bits + 7) // 8
    return int.from_bytes(gen.bytes(nbytes), "big") >> (nbytes * 8 - bits)


def gen_ruleset(
    fields: Sequence[FieldSpec],
    count: int,
    histogram: Mapping[int, float],
    seed: int,
    actions: int = 64,
) -> list[Rule]:
    """Generate ``count`` unique rules.

    Earlier fields are exact values; the last field is a prefix whose length
    follows ``histogram``. Actions are drawn from ``1..actions`` and
    priorities are unique.

    Raises:
        RuleError: If a histogram bucket asks for more rules than its domain holds
    """
    if count < 1:
        raise RuleError("Rule count must be >= 1")
    if not fields:
        raise RuleError("A ruleset needs at least one field")
    last = fields[-1]
    lead_bits = sum(f.width for f in fields[:-1])
    for length in histogram:
        if not 0 <= length <= last.width:
            raise RuleError(f"Prefix length /{length} outside field {last.name} ({last.width} bits)")

    gen = SeededRng(seed).child("ruleset").gen
    tuples: list[tuple[int, int, int]] = []
    for length, quota in sorted(apportion(count, histogram).items()):
        if quota == 0:
            continue
        bits = lead_bits + length
        domain = 1 << bits
        if quota > domain:
            raise RuleError(f"{quota} unique /{length} rules requested but only {domain} exist")
        if domain <= ENUMERATE_LIMIT:
            picks = [int(v) for v in gen.choice(domain, size=quota, replace=False)]
        else:
            seen: set[int] = set()
            picks = []
            while len(picks) < quota:
                v = _random_bits(gen, bits)
                if v not in seen:
                    seen.add(v)
                    picks.append(v)
        tuples.extend((v >> length, v & ((1 << length) - 1), length) for v in picks)

    order = gen.permutation(len(tuples))
    action_ids = gen.integers(1, actions + 1, size=len(tuples))
    rules: list[Rule] = []
    for priority, i in enumerate(order):
        lead, prefix, length = tuples[int(i)]
        matches: list[Exact | Prefix | Range] = []
        shift = lead_bits
        for f in fields[:-1]:
            shift -= f.width
            matches.append(Exact((lead >> shift) & ((1 << f.width) - 1)))
        matches.append(Prefix(prefix << (last.width - length), length))
        rules.append(Rule(tuple(matches), int(action_ids[int(i)]), priority))
    logger.debug("Generated %d rules with histogram %s", len(rules), dict(histogram))
    return rules


def materialize_key(rule: Rule, fields: Sequence[FieldSpec], gen: np.random.Generator) -> Key:
    """A key matching ``rule``: wildcard bits are filled at random."""
    value = 0
    for match, f in zip(rule.matches, fields):
        if isinstance(match, Exact):
            part = match.value
        elif isinstance(match, Prefix):
            part = match.value | _random_bits(gen, f.width - match.length)
        else:
            part = match.lo + _random_bits(gen, 64) % (match.hi - match.lo + 1)
        value = (value << f.width) | part
    width = sum(f.width for f in fields)
    return Key.from_int(value, (width + 7) // 8)


def rule_popularity(n_rules: int, exponent: float, gen: np.random.Generator) -> np.ndarray:
    """Zipf weights over a seeded permutation of rule indices."""
    ranks = np.empty(n_rules, dtype=float)
    ranks[gen.permutation(n_rules)] = np.arange(1, n_rules + 1, dtype=float)
    weights = ranks**-exponent
    return weights / weights.sum()


def bind_rule_keys(
    rules: Sequence[Rule], fields: Sequence[FieldSpec], n_flows: int, exponent: float, seed: int
) -> tuple[np.ndarray, list[Key]]:
    """Bind ``n_flows`` flows to rules by Zipf popularity.

    Returns:
        (rule index per flow, key per flow); flows sharing a rule share its key
    """
    rng = SeededRng(seed)
    gen = rng.child("binding").gen
    key_gen = rng.child("keys").gen
    rule_keys = [materialize_key(r, fields, key_gen) for r in rules]
    if n_flows == 0:
        return np.zeros(0, dtype=np.int64), []
    weights = rule_popularity(len(rules), exponent, gen)
    idx = gen.choice(len(rules), size=n_flows, p=weights)
    return idx.astype(np.int64), [rule_keys[int(i)] for i in idx]


# -- traces ------------------------------------------------------------------


@dataclass
class FlowSpec:
    """One synthetic flow."""

    flow_id: int
    size: int
    rate_pps: float
    start_ns: int
    key: Key
    rule_index: int = -1
    path_seed: int = 0


@dataclass
class Trace:
    """Packet arrivals sorted by time (ties by flow id)."""

    times_ns: np.ndarray
    flow_ids: np.ndarray
    keys: dict[int, Key]
    duration_ns: int
    flows: list[FlowSpec] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times_ns)

    @classmethod
    def empty(cls, duration_ns: int = 0) -> Trace:
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), {}, duration_ns)

    def path_seed(self, flow_id: int) -> int:
        return hash32(f"path:{flow_id}")

    def rate_pps(self) -> float:
        if self.duration_ns <= 0:
            return 0.0
        return len(self) / (self.duration_ns * 1e-9)


def profile_segments(
    duration_ns: int, rate_pps: float, profile: Iterable[Segment] | None = None
) -> list[Segment]:
    segments = list(profile or [])
    return segments if segments else [(duration_ns, rate_pps)]


def constant_profile(rate_pps: float, duration_ns: int) -> list[Segment]:
    return [(duration_ns, rate_pps)]


def step_profile(low_pps: float, high_pps: float, duration_ns: int, step_at: float = 0.5) -> list[Segment]:
    """``low`` until ``step_at`` of the run, ``high`` afterwards."""
    first = int(duration_ns * step_at)
    return [(first, low_pps), (duration_ns - first, high_pps)]


def ramp_profile(low_pps: float, high_pps: float, duration_ns: int, steps: int = 10) -> list[Segment]:
    """Piecewise-constant linear ramp in ``steps`` equal segments."""
    seg = duration_ns // steps
    out: list[Segment] = []
    for i in range(steps):
        length = seg if i < steps - 1 else duration_ns - seg * (steps - 1)
        rate = low_pps + (high_pps - low_pps) * i / max(1, steps - 1)
        out.append((length, rate))
    return out


def gen_trace(
    dist: FlowSizeDistribution,
    flow_count: int,
    target_rate: float,
    duration_ns: int,
    seed: int,
    rules: Sequence[Rule] = (),
    fields: Sequence[FieldSpec] = (),
    rule_zipf: float = 1.0,
    key_width: int = 4,
    uniform_starts: bool = True,
    profile: Iterable[Segment] | None = None,
) -> Trace:
    """Generate packet arrivals for ``flow_count`` flows.

    Flow ``f`` emits Poisson arrivals at ``c * size_f`` pps over
    ``[start_f, end)``. Per profile segment, ``c`` is chosen so the expected
    packet count equals the segment rate times its length.
    """
    segments = profile_segments(duration_ns, target_rate, profile)
    total_ns = sum(d for d, _ in segments)
    rng = SeededRng(seed)
    if flow_count == 0:
        return Trace.empty(total_ns)

    gen = rng.child("flows").gen
    sizes = dist.sample(gen, flow_count).astype(float)
    if uniform_starts:
        starts = np.floor(gen.random(flow_count) * total_ns).astype(np.int64)
    else:
        starts = np.zeros(flow_count, dtype=np.int64)

    if rules:
        rule_idx, keys = bind_rule_keys(rules, fields, flow_count, rule_zipf, rng.child("rules").seed)
    else:
        key_gen = rng.child("keys").gen
        rule_idx = np.full(flow_count, -1, dtype=np.int64)
        keys = [Key(key_gen.bytes(key_width)) for _ in range(flow_count)]

    pkt_gen = rng.child("packets").gen
    all_times: list[np.ndarray] = []
    all_flows: list[np.ndarray] = []
    rates = np.zeros(flow_count)
    t0 = 0
    for seg_ns, seg_rate in segments:
        t1 = t0 + seg_ns
        lo = np.maximum(starts, t0).astype(float)
        span_s = np.clip(t1 - lo, 0.0, None) * 1e-9
        weight = float(np.dot(sizes, span_s))
        if weight > 0 and seg_rate > 0:
            c = seg_rate * seg_ns * 1e-9 / weight
            lam = c * sizes
            rates = np.maximum(rates, lam)
            counts = pkt_gen.poisson(lam * span_s)
            flow_idx = np.repeat(np.arange(flow_count), counts)
            offsets = pkt_gen.random(len(flow_idx)) * (t1 - lo[flow_idx])
            all_times.append(np.floor(lo[flow_idx] + offsets).astype(np.int64))
            all_flows.append(flow_idx.astype(np.int64))
        t0 = t1

    times = np.concatenate(all_times) if all_times else np.zeros(0, dtype=np.int64)
    flow_ids = np.concatenate(all_flows) if all_flows else np.zeros(0, dtype=np.int64)
    order = np.lexsort((flow_ids, times))
    flows = [
        FlowSpec(
            flow_id=f,
            size=int(sizes[f]),
            rate_pps=float(rates[f]),
            start_ns=int(starts[f]),
            key=keys[f],
            rule_index=int(rule_idx[f]),
            path_seed=hash32(f"path:{f}"),
        )
        for f in range(flow_count)
    ]
    trace = Trace(times[order], flow_ids[order], {f: keys[f] for f in range(flow_count)}, total_ns, flows)
    logger.info(
        "Generated %d packets from %d flows over %d ns (%.3g pps)", len(trace), flow_count, total_ns, trace.rate_pps()
    )
    return trace


def format_trace(trace: Trace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for t, f in zip(trace.times_ns.tolist(), trace.flow_ids.tolist()):
        writer.writerow((t, f, trace.keys[f].hex()))
    return buf.getvalue()


def write_trace(trace: Trace, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_trace(trace), encoding="utf-8")


def parse_trace(text: str, duration_ns: int | None = None) -> Trace:
    """Parse ``time_ns,flow_id,vmt_entry_key_hex`` rows.

    Raises:
        ValueError: On malformed rows, unsorted times or a flow changing key
    """
    times: list[int] = []
    flow_ids: list[int] = []
    keys: dict[int, Key] = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or (lineno == 1 and row[0] == TRACE_HEADER[0]):
            continue
        if len(row) != 3:
            raise ValueError(f"Trace line {lineno}: expected 3 columns, got {len(row)}")
        t, f, key = int(row[0]), int(row[1]), Key.from_hex(row[2].strip())
        if times and t < times[-1]:
            raise ValueError(f"Trace line {lineno}: time {t} goes backwards")
        if keys.setdefault(f, key) != key:
            raise ValueError(f"Trace line {lineno}: flow {f} changes key")
        times.append(t)
        flow_ids.append(f)
    end = duration_ns if duration_ns is not None else (times[-1] + 1 if times else 0)
    return Trace(np.array(times, dtype=np.int64), np.array(flow_ids, dtype=np.int64), keys, end)


def load_trace(path: Path, duration_ns: int | None = None) -> Trace:
    return parse_trace(path.read_text(encoding="utf-8"), duration_ns)


# -- routing -----------------------------------------------------------------


def route_phv(phv: Phv, cfg: CfgGraph, rng: SeededRng | None = None) -> NodeId:
    """Next node for ``phv`` from its current node's transition row.

    The draw hashes ``(path_seed, node)`` so every packet of a flow takes the
    same branch; passing ``rng`` switches to an independent per-packet draw.
    """
    row = cfg.row(phv.current_node)
    if not row:
        return SINK
    if rng is None:
        u = hash32(f"{phv.path_seed}:{phv.current_node}") / RING_SIZE
    else:
        u = rng.random()
    acc = 0.0
    for node, p in row.items():
        acc += p
        if u < acc:
            return node
    return SINK
