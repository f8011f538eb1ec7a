"""Flow propagation and PMU allocation solvers.

``propagate_flows`` pushes the source rate through the CFG in topological
order; each node forwards ``min(inflow, usl_capacity(inflow, n))`` split by
its transition probabilities. The objective is the rate delivered to the
sink. ``solve_allocation`` searches integer PMU counts maximizing it, either
by exhaustive enumeration or by greedy marginal gain plus swap search.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Literal

from vmtsim.core import SINK, SOURCE, NodeId
from vmtsim.optimizer.cfg import CfgGraph, chain_cfg
from vmtsim.optimizer.usl import UslDomainError, UslParams

logger = logging.getLogger(__name__)

REL_TOL = 1e-12
MPPS = 1e6

SolverMode = Literal["exact", "heuristic"]


class AllocationError(ValueError):
    """The PMU floor cannot be met with the available PMUs."""


@dataclass
class FlowAssignment:
    """Per-edge flows (pps) and per-node inflow/throughput."""

    flows: dict[tuple[NodeId, NodeId], float] = field(default_factory=dict)
    inflow: dict[int, float] = field(default_factory=dict)
    throughput: dict[int, float] = field(default_factory=dict)


@dataclass
class Allocation:
    """PMU counts per node and the objective they achieve."""

    counts: dict[int, int]
    available: int
    objective: float = 0.0

    @property
    def used(self) -> int:
        return sum(self.counts.values())


class CompiledCfg:
    """Index-based CFG for repeated evaluation."""

    def __init__(
        self,
        cfg: CfgGraph,
        params: Mapping[int, UslParams],
        default: UslParams | None = None,
        scale: float = MPPS,
    ) -> None:
        cfg.validate()
        self.cfg = cfg
        self.scale = scale
        self.order = cfg.topological_nodes()
        self.pos = {node: i for i, node in enumerate(self.order)}
        entry = cfg.row(SOURCE)
        self.entry = [float(entry.get(node, 0.0)) for node in self.order]
        self.succ: list[list[tuple[int, float]]] = []
        self.sink: list[float] = []
        for node in self.order:
            row = cfg.row(node)
            self.succ.append([(self.pos[k], p) for k, p in row.items() if k != SINK])
            self.sink.append(float(row.get(SINK, 0.0)))
        fallback = default or UslParams()
        self.params = [params.get(node, fallback) for node in self.order]

    def evaluate(self, counts: Sequence[int], source_rate: float) -> tuple[float, list[float], list[float]]:
        """Propagate with ``counts`` in topological position order.

        Returns:
            (objective, inflow, throughput) in pps

        Raises:
            UslDomainError: If a node's USL denominator is not positive
        """
        m = len(self.order)
        inflow = [source_rate * p for p in self.entry]
        thr = [0.0] * m
        objective = 0.0
        scale = self.scale
        for i in range(m):
            x = inflow[i]
            n = counts[i]
            if x <= 0.0 or n <= 0:
                continue
            p = self.params[i]
            xs = x / scale
            denom = 1.0 + (n * p.alpha0 + p.alpha1) * (xs - 1.0)
            if denom <= 0.0:
                raise UslDomainError(f"USL denominator {denom:.6g} <= 0 at node {self.order[i]}")
            cap = (xs / denom + (n * p.beta0 + p.beta1) * xs) * scale
            t = x if cap >= x else max(cap, 0.0)
            thr[i] = t
            for k, prob in self.succ[i]:
                inflow[k] += t * prob
            objective += t * self.sink[i]
        return objective, inflow, thr

    def objective(self, counts: Sequence[int], source_rate: float) -> float:
        try:
            return self.evaluate(counts, source_rate)[0]
        except UslDomainError:
            return -math.inf


def propagate_flows(
    cfg: CfgGraph,
    alloc: Mapping[int, int],
    params: Mapping[int, UslParams],
    source_rate: float,
    scale: float = MPPS,
) -> tuple[FlowAssignment, float]:
    """Propagate ``source_rate`` through ``cfg`` under allocation ``alloc``.

    A node with zero PMUs forwards nothing.

    Raises:
        CfgError: If the CFG has a cycle
        UslDomainError: If a node's USL denominator is not positive
    """
    compiled = CompiledCfg(cfg, params, scale=scale)
    counts = [alloc.get(node, 0) for node in compiled.order]
    objective, inflow, thr = compiled.evaluate(counts, source_rate)
    out = FlowAssignment()
    for node, p in zip(compiled.order, compiled.entry):
        if p > 0:
            out.flows[(SOURCE, node)] = source_rate * p
    for i, node in enumerate(compiled.order):
        out.inflow[node] = inflow[i]
        out.throughput[node] = thr[i]
        for k, prob in compiled.succ[i]:
            out.flows[(node, compiled.order[k])] = thr[i] * prob
        if compiled.sink[i] > 0:
            out.flows[(node, SINK)] = thr[i] * compiled.sink[i]
    return out, objective


def _better(obj: float, best: float) -> bool:
    return obj > best + REL_TOL * max(1.0, abs(best))


def _tied(obj: float, best: float) -> bool:
    return abs(obj - best) <= REL_TOL * max(1.0, abs(best))


def _prefer(cand: Sequence[int], incumbent: Sequence[int]) -> bool:
    """Tie-break: smaller total, then more PMUs at lower node ids."""
    if sum(cand) != sum(incumbent):
        return sum(cand) < sum(incumbent)
    return tuple(cand) > tuple(incumbent)


def bounded_compositions(k: int, total: int, floor: int) -> Iterator[tuple[int, ...]]:
    """All k-tuples with entries >= floor and sum <= total."""
    if k == 0:
        yield ()
        return
    for first in range(floor, total - floor * (k - 1) + 1):
        for rest in bounded_compositions(k - 1, total - first, floor):
            yield (first, *rest)


def solve_allocation(
    cfg: CfgGraph,
    n_total: int,
    params: Mapping[int, UslParams],
    source_rate: float,
    mode: SolverMode = "exact",
    floor: int = 1,
    scale: float = MPPS,
) -> Allocation:
    """Choose PMU counts maximizing delivered throughput with at most ``n_total`` PMUs.

    Only nodes reachable from ``s`` receive PMUs; each gets at least ``floor``.

    Raises:
        AllocationError: If ``n_total`` cannot cover the floor
    """
    compiled = CompiledCfg(cfg, params, scale=scale)
    active = cfg.active_nodes()
    if floor * len(active) > n_total:
        raise AllocationError(
            f"{n_total} PMUs cannot give {floor} to each of {len(active)} active nodes"
        )
    positions = [compiled.pos[node] for node in active]

    def full(vec: Sequence[int]) -> list[int]:
        counts = [0] * len(compiled.order)
        for p, v in zip(positions, vec):
            counts[p] = v
        return counts

    if mode == "exact":
        best_vec: tuple[int, ...] | None = None
        best_obj = -math.inf
        for vec in bounded_compositions(len(active), n_total, floor):
            obj = compiled.objective(full(vec), source_rate)
            if best_vec is None or _better(obj, best_obj):
                best_vec, best_obj = vec, obj
            elif _tied(obj, best_obj) and _prefer(vec, best_vec):
                best_vec, best_obj = vec, max(obj, best_obj)
        assert best_vec is not None
        vec_list = list(best_vec)
    else:
        vec_list = _heuristic(compiled, positions, n_total, floor, source_rate)

    counts = {node: 0 for node in compiled.order}
    counts.update(dict(zip(active, vec_list)))
    objective = compiled.objective(full(vec_list), source_rate)
    return Allocation(counts, n_total, objective)


def _heuristic(
    compiled: CompiledCfg, positions: list[int], n_total: int, floor: int, source_rate: float
) -> list[int]:
    k = len(positions)
    vec = [floor] * k

    def evaluate(v: Sequence[int]) -> tuple[float, list[int]]:
        counts = [0] * len(compiled.order)
        for p, x in zip(positions, v):
            counts[p] = x
        try:
            obj, inflow, thr = compiled.evaluate(counts, source_rate)
        except UslDomainError:
            return -math.inf, []
        bound = [i for i, p in enumerate(positions) if thr[p] < inflow[p] * (1.0 - REL_TOL)]
        return obj, bound

    obj, bound = evaluate(vec)

    # greedy marginal gain
    while sum(vec) < n_total and bound:
        best_i, best_obj = -1, obj
        for i in bound:
            vec[i] += 1
            cand, _ = evaluate(vec)
            vec[i] -= 1
            if _better(cand, best_obj):
                best_i, best_obj = i, cand
        if best_i >= 0:
            vec[best_i] += 1
            obj, bound = evaluate(vec)
            continue
        if len(bound) > 1 and sum(vec) + len(bound) <= n_total:
            for i in bound:
                vec[i] += 1
            cand, cand_bound = evaluate(vec)
            if _better(cand, obj):
                obj, bound = cand, cand_bound
                continue
            for i in bound:
                vec[i] -= 1
        break

    # pairwise swap toward capacity-bound nodes until no swap improves
    improved = True
    while improved:
        improved = False
        for r in bound:
            for d in range(k):
                if d == r or vec[d] <= floor:
                    continue
                vec[d] -= 1
                vec[r] += 1
                cand, cand_bound = evaluate(vec)
                if _better(cand, obj):
                    obj, bound = cand, cand_bound
                    improved = True
                    break
                vec[d] += 1
                vec[r] -= 1
            if improved:
                break
    return vec


def benchmark_heuristic(
    sizes: Sequence[int] = (10, 25, 50, 100),
    extra: int = 10,
    rate_pps: float = 50e6,
    params: UslParams | None = None,
) -> list[dict[str, float]]:
    """Time the heuristic on chain CFGs of growing size."""
    usl = params or UslParams(0.0, 0.05, 0.08, 0.0)
    rows: list[dict[str, float]] = []
    for size in sizes:
        cfg = chain_cfg(range(size))
        start = time.perf_counter()
        alloc = solve_allocation(
            cfg, size + extra, dict.fromkeys(range(size), usl), rate_pps, mode="heuristic"
        )
        elapsed = time.perf_counter() - start
        rows.append({"nodes": size, "pmus": size + extra, "seconds": elapsed, "objective": alloc.objective})
        logger.info("heuristic on %d-node chain: %.4f s", size, elapsed)
    return rows
