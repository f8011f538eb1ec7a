"""Deterministic cycle loop.

Every pipeline cycle runs the units in a fixed order:

1. inject arrivals into the source buffer and admit one PHV into its entry VMT
2. VMT produce (one PHV per VMT: lookup request or default action)
3. interconnect routing into PMU request queues
4. PMU ticks (clock-ratio gated)
5. ELU miss collection and tick
6. one ELU resolution back to its owning PMU
7. PMU responses onto the response bus
8. bus delivery, VMT consume, routing of emitted PHVs to the next node
9. reallocation progress
10. window accounting, transition estimation and the optimizer

Fully idle stretches are skipped up to the next arrival or window boundary.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from vmtsim.config import ConfigError, SimConfig
from vmtsim.core import SINK, SOURCE, ClockedQueue, Key, Phv, ProtocolFault, SeededRng
from vmtsim.dataplane.elu import Elu, compile_policy, elu_tick
from vmtsim.dataplane.interconnect import Interconnect, ResponseBus
from vmtsim.dataplane.pmu import Pmu, PmuStateKind
from vmtsim.dataplane.vmt import Emission, ReqIdSource, Vmt, classify_key
from vmtsim.engine.metrics import Metrics, VmtMetrics, WindowSample
from vmtsim.optimizer.cfg import (
    CfgError,
    CfgGraph,
    EdgeCounters,
    chain_cfg,
    estimate_transition_matrix,
    load_cfg,
    two_path_cfg,
)
from vmtsim.optimizer.realloc import Reallocator, plan_transition
from vmtsim.optimizer.solver import AllocationError, CompiledCfg, solve_allocation
from vmtsim.optimizer.usl import FitError, UslParams, fit_usl
from vmtsim.traffic import (
    Trace,
    bind_rule_keys,
    gen_ruleset,
    gen_trace,
    load_trace,
    make_distribution,
    route_phv,
)
from vmtsim.utils.rules import FieldSpec, Rule, load_ruleset
from vmtsim.utils.trie import Trie

logger = logging.getLogger(__name__)

Policies = dict[int, tuple[list[FieldSpec], list[Rule]]]
UslSample = tuple[float, float, int]


class DeadlockError(Exception):
    """The run did not drain within the timeout."""

    def __init__(self, message: str, diagnostics: dict[str, Any]) -> None:
        super().__init__(message)
        self.message = message
        self.diagnostics = diagnostics


@dataclass
class RunResult:
    """Metrics, window series and USL samples of one run."""

    metrics: Metrics
    windows: list[WindowSample]
    usl_samples: dict[int, list[UslSample]] = field(default_factory=dict)

    def window_rows(self) -> list[dict[str, Any]]:
        return [w.row() for w in self.windows]


# -- workload assembly -------------------------------------------------------


def build_cfg(config: SimConfig) -> tuple[CfgGraph, dict[int, UslParams]]:
    """The configured CFG and the USL parameters it carries.

    Raises:
        ConfigError: If the CFG names a node with no configured VMT
    """
    ids = sorted(v.id for v in config.vmts)
    file_usl: dict[int, UslParams] = {}
    if config.cfg.file is not None:
        parsed = load_cfg(config.cfg.file)
        cfg, file_usl = parsed.cfg, parsed.usl
    elif config.cfg.builtin == "two-path":
        cfg = two_path_cfg()
    else:
        cfg = chain_cfg(ids)
    unknown = sorted(set(cfg.nodes) - set(ids))
    if unknown:
        raise ConfigError(f"CFG nodes {unknown} have no configured VMT", "cfg")
    return cfg, file_usl


def usl_params(config: SimConfig, file_usl: Mapping[int, UslParams] | None = None) -> dict[int, UslParams]:
    """Per-node USL parameters: config entries, then CFG file entries, then the default."""
    out: dict[int, UslParams] = {}
    for v in config.vmts:
        if v.id in config.optimizer.usl or not file_usl or v.id not in file_usl:
            out[v.id] = UslParams(**config.usl_for(v.id).model_dump())
        else:
            out[v.id] = file_usl[v.id]
    return out


def load_policies(config: SimConfig) -> Policies:
    """Ruleset per VMT, read from file or generated from the VMT's seed stream."""
    rng = SeededRng(config.seed)
    policies: Policies = {}
    for v in config.vmts:
        fields = [FieldSpec(f.name, f.width) for f in v.key_fields]
        if v.rules.file is not None:
            file_fields, rules = load_ruleset(v.rules.file, fields)
            if sum(f.width for f in file_fields) != v.key_bits:
                raise ConfigError(f"Ruleset {v.rules.file} does not match VMT {v.id} key width", "rules")
            fields = list(file_fields)
        else:
            rules = gen_ruleset(
                fields, v.rules.count, v.rules.histogram, rng.child(f"rules{v.id}").seed, v.rules.actions
            )
        policies[v.id] = (fields, rules)
    return policies


def entry_vmt(cfg: CfgGraph, config: SimConfig) -> int:
    entries = cfg.entry_nodes()
    if not entries:
        return min(v.id for v in config.vmts)
    return max(entries, key=lambda n: (entries[n], -n))


def build_trace(config: SimConfig, policies: Policies, entry: int) -> Trace:
    """Replay the configured trace file or generate traffic for ``entry``."""
    t = config.traffic
    if t.trace is not None:
        return load_trace(t.trace, duration_ns=config.duration_ns)
    fields, rules = policies[entry]
    dist = make_distribution(t.distribution, t.size_param, t.max_size, t.cdf_file)
    profile = [(s.duration_ns, s.rate_pps) for s in t.profile] or None
    return gen_trace(
        dist,
        t.flows,
        t.rate_pps,
        config.duration_ns,
        SeededRng(config.seed).child("traffic").seed,
        rules=rules,
        fields=fields,
        rule_zipf=t.rule_zipf,
        key_width=config.vmt(entry).key_width,
        uniform_starts=t.uniform_starts,
        profile=profile,
    )


def prepare_workload(config: SimConfig) -> tuple[Policies, Trace]:
    """Policies and trace for ``config``; shareable across runs that only change hardware."""
    cfg, _ = build_cfg(config)
    policies = load_policies(config)
    return policies, build_trace(config, policies, entry_vmt(cfg, config))


# -- simulator ---------------------------------------------------------------


class Simulator:
    """All units of one simulated pipeline."""

    def __init__(
        self,
        config: SimConfig,
        trace: Trace | None = None,
        policies: Policies | None = None,
        initial_counts: Mapping[int, int] | None = None,
    ) -> None:
        self.config = config
        self.cycle_ns = config.pipeline.cycle_ns
        self.cfg, file_usl = build_cfg(config)
        self.usl = usl_params(config, file_usl)
        self.policies = policies if policies is not None else load_policies(config)
        self.entry = entry_vmt(self.cfg, config)

        elu_cfg = config.elu
        self.tries: dict[int, Trie] = {
            v.id: compile_policy(
                self.policies[v.id][1],
                self.policies[v.id][0],
                elu_cfg.stride,
                elu_cfg.n_banks,
                default_action=v.default_action,
                bank_offset=v.id,
            )
            for v in config.vmts
        }

        self.pmus = [Pmu(i, config.pmu) for i in range(config.pmu_count)]
        self.req_ids = ReqIdSource()
        self.vmts: dict[int, Vmt] = {
            v.id: Vmt(v, self.req_ids, config.pipeline.phv_fifo_depth, config.pipeline.strict_order)
            for v in sorted(config.vmts, key=lambda v: v.id)
        }
        self.net = Interconnect(config.pmu_count, config.interconnect)
        self.bus = ResponseBus(config.interconnect.response_latency)
        self.elu = Elu(elu_cfg, self.tries, self.cycle_ns)
        self.realloc = Reallocator(self.pmus, self.vmts)
        counts = initial_counts if initial_counts is not None else {v.id: v.pmus for v in config.vmts}
        self.realloc.associate_initial(counts)

        self.trace = trace if trace is not None else build_trace(config, self.policies, self.entry)
        self._arrivals = np.floor(self.trace.times_ns / self.cycle_ns).astype(np.int64)
        self._next = 0
        self.duration_cycles = max(config.duration_cycles, int(self.trace.duration_ns / self.cycle_ns))
        self._flow_keys = self._bind_keys()
        self.source: ClockedQueue[Phv] = ClockedQueue(config.pipeline.source_buffer, "source")

        self.counters = EdgeCounters()
        self.matrix = self.cfg.matrix()
        self.window_cycles = config.window_cycles
        self.windows: list[WindowSample] = []
        self.usl_samples: dict[int, list[UslSample]] = defaultdict(list)
        self.metrics = Metrics(
            cycle_ns=self.cycle_ns,
            node_bytes=elu_cfg.node_bytes,
            vmts={vid: VmtMetrics() for vid in self.vmts},
        )
        self._win = self._new_window(0, 0)
        self._mem_mark = 0
        self._stall_mark = 0
        self._opt_usl: dict[int, UslParams] | None = None
        self.cycle = 0

    # -- setup ---------------------------------------------------------------

    def _bind_keys(self) -> dict[int, list[Key]]:
        """Per-VMT flow keys for generated traffic; replayed traces reuse the entry key."""
        out: dict[int, list[Key]] = {}
        if not self.trace.flows:
            return out
        rng = SeededRng(self.config.seed)
        for vid in self.vmts:
            if vid == self.entry:
                continue
            fields, rules = self.policies[vid]
            _, keys = bind_rule_keys(
                rules, fields, len(self.trace.flows), self.config.traffic.rule_zipf, rng.child(f"keys{vid}").seed
            )
            out[vid] = keys
        return out

    def _keys_for(self, flow_id: int) -> dict[int, Key]:
        entry_key = self.trace.keys[flow_id]
        return {vid: self._flow_keys[vid][flow_id] if vid in self._flow_keys else entry_key for vid in self.vmts}

    def warm(self, vmt_id: int, keys: list[Key]) -> int:
        """Pre-load ``keys`` with their policy actions into the owning PMUs' CAMs."""
        vmt = self.vmts[vmt_id]
        warmed = 0
        for key in keys:
            key = key.resized(vmt.key_width)
            owner = classify_key(vmt.table, key)
            if owner is None:
                continue
            action, _ = self.tries[vmt_id].lookup(key)
            self.pmus[owner].fill(key, action)
            warmed += 1
        return warmed

    # -- one cycle -----------------------------------------------------------

    def _new_window(self, index: int, start: int) -> WindowSample:
        return WindowSample(
            window=index,
            start_cycle=start,
            cycles=0,
            vmt_in=dict.fromkeys(self.vmts, 0),
            vmt_out=dict.fromkeys(self.vmts, 0),
        )

    def _deliver(self, phv: Phv) -> None:
        self.metrics.emitted += 1
        self._win.emitted += 1

    def _inject(self, cycle: int) -> None:
        while self._next < len(self._arrivals) and self._arrivals[self._next] <= cycle:
            i = self._next
            self._next += 1
            flow = int(self.trace.flow_ids[i])
            self.metrics.injected += 1
            self._win.injected += 1
            arriving = Phv(i, flow, self._keys_for(flow), cycle, path_seed=self.trace.path_seed(flow))
            if not self.source.push(arriving):
                self.metrics.dropped += 1

        if not self.source:
            return
        phv = self.source.peek()
        assert phv is not None
        if phv.current_node == SOURCE:
            nxt = route_phv(phv, self.cfg)
            self.counters.record(SOURCE, nxt)
            phv.current_node = nxt
        if phv.current_node == SINK:
            self.source.pop()
            self._deliver(phv)
            return
        vid = int(phv.current_node)
        if self.vmts[vid].input.push(phv):
            self.source.pop()
            self._win.vmt_in[vid] += 1

    def _forward(self, vmt_id: int, emission: Emission) -> None:
        phv = emission.phv
        phv.path.append(vmt_id)
        if emission.outcome != "default":
            self.metrics.latency.record(emission.latency)
        self._win.vmt_out[vmt_id] += 1
        if emission.outcome == "hit":
            self._win.hits += 1
        elif emission.outcome == "miss":
            self._win.misses += 1
        else:
            self._win.defaults += 1
        nxt = route_phv(phv, self.cfg)
        self.counters.record(vmt_id, nxt)
        phv.current_node = nxt
        if nxt == SINK:
            self._deliver(phv)
        elif not self.vmts[vmt_id].output.push(phv):
            raise ProtocolFault(f"Output FIFO overrun toward VMT {nxt}", unit=f"vmt{vmt_id}", req_id=phv.phv_id)

    def _drain_outputs(self) -> None:
        """Move each output FIFO head into its next VMT while that input has room."""
        for vmt in self.vmts.values():
            while vmt.output:
                phv = vmt.output.peek()
                assert phv is not None
                nxt = int(phv.current_node)
                if not self.vmts[nxt].input.push(phv):
                    break
                vmt.output.pop()
                self._win.vmt_in[nxt] += 1

    def _produce(self, cycle: int) -> None:
        for vid, vmt in self.vmts.items():
            phv = vmt.input.peek()
            if phv is None:
                continue
            if not vmt.has_output_credit():
                vmt.stall_cycles += 1
                continue
            pmu_id = vmt.classify(phv)
            if pmu_id is None:
                vmt.input.pop()
                for em in vmt.emit_default(phv, cycle):
                    self._forward(vid, em)
                continue
            if vmt.await_full() or not self.net.has_room(pmu_id):
                vmt.stall_cycles += 1
                continue
            req = vmt.produce_request(phv, pmu_id, cycle)
            assert req is not None
            self.net.offer(req)
            vmt.input.pop()

    def step(self, cycle: int) -> None:
        """Advance every unit through pipeline cycle ``cycle``."""
        self._inject(cycle)
        self._produce(cycle)
        self.net.route(self.pmus, cycle)
        for pmu in self.pmus:
            if not pmu.idle():
                pmu.tick(cycle)

        self.elu.collect([p.q_m for p in self.pmus], self.config.elu.collect_width)
        elu_tick(self.elu, cycle)
        res = self.elu.q_lg.peek()
        if res is not None and self.pmus[res.pmu_id].can_accept_resolution():
            self.elu.q_lg.pop()
            self.pmus[res.pmu_id].resolve(res.req_id, res.key, res.action, res.vmt_id)

        self.bus.collect(self.pmus, cycle)
        for resp in self.bus.deliver(cycle):
            for em in self.vmts[resp.vmt_id].consume_response(resp, cycle):
                self._forward(resp.vmt_id, em)
        self._drain_outputs()

        if self.realloc.busy:
            self.realloc.progress(self.net)
        if (cycle + 1) % self.window_cycles == 0:
            self._close_window(cycle + 1)

    # -- windows and the optimizer -------------------------------------------

    def _stall_total(self) -> int:
        return sum(v.stall_cycles for v in self.vmts.values())

    def _close_window(self, end_cycle: int) -> None:
        w = self._win
        w.cycles = end_cycle - w.start_cycle
        w.mem_reads = self.elu.memory.reads - self._mem_mark
        w.stall_cycles = self._stall_total() - self._stall_mark
        self._mem_mark = self.elu.memory.reads
        self._stall_mark = self._stall_total()
        w.vmt_pmus = self.realloc.counts()
        w.active_pmus = sum(1 for p in self.pmus if p.state.kind != PmuStateKind.FREE)
        seconds = w.cycles * self.cycle_ns * 1e-9
        w.throughput_pps = w.emitted / seconds
        w.offered_pps = w.injected / seconds
        for vid, n in w.vmt_pmus.items():
            if n > 0 and w.vmt_in[vid] > 0:
                self.usl_samples[vid].append((w.vmt_in[vid] / seconds / 1e6, w.vmt_out[vid] / seconds / 1e6, n))
        self.windows.append(w)

        self.matrix = estimate_transition_matrix(self.counters, self.matrix, self.config.optimizer.gamma)
        self.counters.reset()
        opt = self.config.optimizer
        if opt.enabled and len(self.windows) % opt.period_windows == 0:
            self.optimize()
        self._win = self._new_window(len(self.windows), end_cycle)

    def current_usl(self) -> dict[int, UslParams]:
        """Configured USL parameters, refit from window samples when online fitting is on."""
        if not self.config.optimizer.fit_online:
            return dict(self.usl)
        params = dict(self.usl)
        for vid, samples in self.usl_samples.items():
            if len({n for _, _, n in samples}) < 2:
                continue
            try:
                params[vid] = fit_usl(samples)
            except FitError as e:
                logger.debug("Online USL refit for VMT %d skipped: %s", vid, e)
        return params

    def optimize(self) -> bool:
        """Run the OPT on the recent windows; True if a reallocation started."""
        opt = self.config.optimizer
        if self.realloc.busy:
            logger.debug("OPT skipped: reallocation in progress")
            return False
        self.metrics.opt_runs += 1
        recent = self.windows[-opt.period_windows :]
        seconds = sum(w.cycles for w in recent) * self.cycle_ns * 1e-9
        rate = sum(w.injected for w in recent) / seconds if seconds > 0 else 0.0
        if rate <= 0:
            return False
        params = self.current_usl()
        self._opt_usl = params
        try:
            cfg_hat = CfgGraph.from_matrix(self.matrix, nodes=self.cfg.nodes)
        except CfgError:
            cfg_hat = self.cfg
        try:
            alloc = solve_allocation(cfg_hat, self.config.pmu_count, params, rate, opt.mode, opt.floor)
        except AllocationError as e:
            logger.warning("OPT skipped: %s", e)
            return False

        current = self.realloc.counts()
        target = {vid: alloc.counts.get(vid, 0) for vid in self.vmts}
        if target == current:
            return False
        compiled = CompiledCfg(cfg_hat, params)
        current_obj = compiled.objective([current.get(n, 0) for n in compiled.order], rate)
        floor_violated = any(current.get(n, 0) < opt.floor for n in cfg_hat.active_nodes())
        if not floor_violated and alloc.objective <= current_obj * (1.0 + opt.realloc_threshold):
            logger.debug("OPT kept %s (gain below threshold)", current)
            return False
        plan = plan_transition(self.realloc.current(), target, self.realloc.free_pmus())
        self.realloc.start(plan)
        self.realloc.progress(self.net)
        self.metrics.reallocations += 1
        logger.info(
            "OPT at cycle %d: %s -> %s (objective %.4g -> %.4g pps)",
            self._win.start_cycle + self._win.cycles,
            current,
            target,
            current_obj,
            alloc.objective,
        )
        return True

    # -- loop ----------------------------------------------------------------

    def idle(self) -> bool:
        return (
            not self.source
            and all(v.idle() for v in self.vmts.values())
            and self.net.idle()
            and self.bus.idle()
            and self.elu.idle()
            and all(p.idle() and not p.outstanding_misses for p in self.pmus)
            and not self.realloc.busy
        )

    def _next_event(self, cycle: int) -> int:
        w = self.window_cycles
        candidates = [(cycle // w + 1) * w - 1]
        if self._next < len(self._arrivals):
            candidates.append(int(self._arrivals[self._next]))
        if cycle < self.duration_cycles:
            candidates.append(self.duration_cycles)
        return max(cycle, min(candidates))

    def diagnostics(self) -> dict[str, Any]:
        return {
            "cycle": self.cycle,
            "source": len(self.source),
            "vmts": {vid: v.diagnostics() for vid, v in self.vmts.items()},
            "pmus": {p.pmu_id: p.diagnostics() for p in self.pmus},
            "interconnect": self.net.diagnostics(),
            "bus": self.bus.diagnostics(),
            "elu": self.elu.diagnostics(),
        }

    def run(self) -> RunResult:
        """Run until the duration has elapsed and every PHV has drained.

        Raises:
            DeadlockError: If in-flight work does not drain within the timeout
            ProtocolFault: On a broken simulator invariant
        """
        last_arrival = int(self._arrivals[-1]) if len(self._arrivals) else 0
        deadline = max(self.duration_cycles, last_arrival + 1) + self.config.drain_timeout_cycles
        logger.info(
            "Run start: %d packets, %d cycles, %d PMUs, %d VMTs",
            len(self.trace),
            self.duration_cycles,
            len(self.pmus),
            len(self.vmts),
        )
        cycle = 0
        while True:
            exhausted = self._next >= len(self._arrivals)
            idle = self.idle()
            if cycle >= self.duration_cycles and exhausted and idle:
                break
            if cycle > deadline:
                self.cycle = cycle
                raise DeadlockError(
                    f"No drain within {self.config.drain_timeout_cycles} cycles (cycle {cycle})",
                    self.diagnostics(),
                )
            if idle:
                cycle = self._next_event(cycle)
                if cycle >= self.duration_cycles and exhausted:
                    continue
            self.cycle = cycle
            self.step(cycle)
            cycle += 1

        self.cycle = cycle
        if cycle > self._win.start_cycle:
            self._close_window(cycle)
        return RunResult(self._finalize(cycle), self.windows, dict(self.usl_samples))

    def _finalize(self, cycles: int) -> Metrics:
        m = self.metrics
        m.cycles = cycles
        m.mem_reads = self.elu.memory.reads
        m.in_flight = m.injected - m.emitted - m.dropped
        for vid, vmt in self.vmts.items():
            m.vmts[vid] = VmtMetrics(
                hits=vmt.hits,
                misses=vmt.misses,
                defaults=vmt.defaults,
                stall_cycles=vmt.stall_cycles,
                reordered=vmt.reordered,
                await_out_of_order=vmt.await_out_of_order,
            )
        usl = self._opt_usl if self._opt_usl is not None else self.current_usl()
        m.usl_fit = {vid: asdict(p) for vid, p in usl.items()}
        m.power_proxy = sum(p.lookups for p in self.pmus) * self.config.pmu.block_size
        node_bytes = self.config.elu.node_bytes
        m.trie_footprint = {
            vid: {"nodes": t.node_count, "bytes": t.footprint(node_bytes), "depth": t.depth}
            for vid, t in self.tries.items()
        }
        stages = len(self.vmts)
        m.hardware_cost = {
            "stages": stages,
            "phv_fifos_rmt": stages,
            "phv_fifos_drmt": len(self.pmus) * stages,
        }
        logger.info(
            "Run end: %d cycles, %d emitted, hit rate %.4f, %.3g pps",
            cycles,
            m.emitted,
            m.hit_rate,
            m.throughput_pps,
        )
        return m


def run(
    config: SimConfig,
    trace: Trace | None = None,
    policies: Policies | None = None,
    initial_counts: Mapping[int, int] | None = None,
) -> RunResult:
    """Build a :class:`Simulator` for ``config`` and run it to completion."""
    return Simulator(config, trace, policies, initial_counts).run()
