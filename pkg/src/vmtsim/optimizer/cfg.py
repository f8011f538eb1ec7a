"""Control-flow graph of logical tables.

The CFG is a DAG over VMT ids plus the virtual source ``s`` and sink ``t``.
Edge weights are transition probabilities; whatever a node's explicit
out-edges leave over flows implicitly to ``t``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx

from vmtsim.core import SINK, SOURCE, NodeId
from vmtsim.optimizer.usl import UslParams

logger = logging.getLogger(__name__)

PROB_TOLERANCE = 1e-9

TransitionMatrix = dict[NodeId, dict[NodeId, float]]


class CfgError(ValueError):
    """Malformed CFG file or cyclic graph."""


def node_order(node: NodeId) -> tuple[int, int]:
    """Sort key: source, VMT ids ascending, sink."""
    if node == SOURCE:
        return (0, 0)
    if node == SINK:
        return (2, 0)
    return (1, int(node))


class CfgGraph:
    """Transition-probability DAG from ``s`` to ``t``."""

    def __init__(self) -> None:
        self.graph: nx.DiGraph = nx.DiGraph()
        self.graph.add_node(SOURCE)
        self.graph.add_node(SINK)

    @classmethod
    def from_matrix(cls, matrix: Mapping[NodeId, Mapping[NodeId, float]], nodes: Iterable[int] = ()) -> CfgGraph:
        cfg = cls()
        for node in nodes:
            cfg.add_node(node)
        for src, row in matrix.items():
            for dst, p in row.items():
                if dst != SINK and p > 0:
                    cfg.add_edge(src, dst, p)
        cfg.validate()
        return cfg

    def add_node(self, node: int) -> None:
        self.graph.add_node(node)

    def add_edge(self, src: NodeId, dst: NodeId, prob: float) -> None:
        if src == SINK or dst == SOURCE:
            raise CfgError(f"Edge {src}->{dst} points the wrong way")
        if not 0.0 <= prob <= 1.0 + PROB_TOLERANCE:
            raise CfgError(f"Edge {src}->{dst} probability {prob} outside [0, 1]")
        self.graph.add_edge(src, dst, prob=prob)

    @property
    def nodes(self) -> list[int]:
        """VMT nodes in ascending id order."""
        return sorted(n for n in self.graph.nodes if n not in (SOURCE, SINK))

    def row(self, node: NodeId) -> dict[NodeId, float]:
        """Successor probabilities of ``node`` including the residual to ``t``."""
        out: dict[NodeId, float] = {}
        total = 0.0
        for _, dst, data in sorted(self.graph.out_edges(node, data=True), key=lambda e: node_order(e[1])):
            if dst == SINK:
                continue
            out[dst] = float(data["prob"])
            total += out[dst]
        residual = 1.0 - total
        explicit_sink = self.graph.get_edge_data(node, SINK)
        if explicit_sink is not None:
            residual = float(explicit_sink["prob"])
        if node != SOURCE and residual > PROB_TOLERANCE:
            out[SINK] = residual
        return out

    def matrix(self) -> TransitionMatrix:
        return {n: self.row(n) for n in [SOURCE, *self.nodes]}

    def validate(self) -> None:
        """Check acyclicity and row sums.

        Raises:
            CfgError: On a cycle or a row summing above one
        """
        if not nx.is_directed_acyclic_graph(self.graph):
            cycle = nx.find_cycle(self.graph)
            raise CfgError(f"CFG contains a cycle: {cycle}")
        for node in [SOURCE, *self.nodes]:
            total = sum(
                float(d["prob"]) for _, dst, d in self.graph.out_edges(node, data=True) if dst != SINK
            )
            if total > 1.0 + PROB_TOLERANCE:
                raise CfgError(f"Outgoing probabilities of {node} sum to {total:.6f} > 1")

    def topological_nodes(self) -> list[int]:
        """VMT nodes in a deterministic topological order (ties by id)."""
        order = nx.lexicographical_topological_sort(self.graph, key=node_order)
        return [n for n in order if n not in (SOURCE, SINK)]

    def active_nodes(self) -> list[int]:
        """Nodes reachable from ``s`` through positive-probability edges."""
        positive = nx.DiGraph(
            (u, v) for u, v, d in self.graph.edges(data=True) if float(d["prob"]) > 0.0
        )
        if SOURCE not in positive:
            return []
        return sorted(n for n in nx.descendants(positive, SOURCE) if n != SINK)

    def entry_nodes(self) -> dict[int, float]:
        return {n: p for n, p in self.row(SOURCE).items() if isinstance(n, int)}


@dataclass
class CfgFile:
    """Parsed CFG file: the graph plus per-node USL parameters."""

    cfg: CfgGraph
    usl: dict[int, UslParams] = field(default_factory=dict)


def _node_id(token: str, lineno: int) -> NodeId:
    if token in (SOURCE, SINK):
        return token
    try:
        return int(token)
    except ValueError as e:
        raise CfgError(f"Line {lineno}: node id {token!r} must be an integer, 's' or 't'") from e


def parse_cfg(text: str) -> CfgFile:
    """Parse ``edge <from> <to> <prob>`` and ``node <id> usl <a0> <a1> <b0> <b1>`` lines."""
    cfg = CfgGraph()
    usl: dict[int, UslParams] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "edge" and len(parts) == 4:
                cfg.add_edge(_node_id(parts[1], lineno), _node_id(parts[2], lineno), float(parts[3]))
            elif parts[0] == "node" and len(parts) == 7 and parts[2] == "usl":
                node = _node_id(parts[1], lineno)
                if not isinstance(node, int):
                    raise CfgError(f"Line {lineno}: USL parameters need a VMT node")
                cfg.add_node(node)
                usl[node] = UslParams(*(float(x) for x in parts[3:7]))
            else:
                raise CfgError(f"Line {lineno}: unrecognised statement {line!r}")
        except ValueError as e:
            if isinstance(e, CfgError):
                raise
            raise CfgError(f"Line {lineno}: {e}") from e
    cfg.validate()
    return CfgFile(cfg, usl)


def load_cfg(path: Path) -> CfgFile:
    parsed = parse_cfg(path.read_text(encoding="utf-8"))
    logger.debug("Loaded CFG with %d nodes from %s", len(parsed.cfg.nodes), path)
    return parsed


def format_cfg(cfg: CfgGraph, usl: Mapping[int, UslParams] | None = None) -> str:
    lines = []
    for src, dst, data in sorted(cfg.graph.edges(data=True), key=lambda e: (node_order(e[0]), node_order(e[1]))):
        lines.append(f"edge {src} {dst} {float(data['prob']):.6g}")
    for node, p in sorted((usl or {}).items()):
        lines.append(f"node {node} usl {p.alpha0:g} {p.alpha1:g} {p.beta0:g} {p.beta1:g}")
    return "\n".join(lines) + "\n"


def chain_cfg(nodes: Iterable[int]) -> CfgGraph:
    """s -> n0 -> n1 -> ... -> t."""
    cfg = CfgGraph()
    prev: NodeId = SOURCE
    for node in nodes:
        cfg.add_edge(prev, node, 1.0)
        prev = node
    cfg.validate()
    return cfg


def two_path_cfg(split: float = 0.5) -> CfgGraph:
    """Two paths sharing an entry and an exit table: 0 -> {1 | 2} -> 3."""
    cfg = CfgGraph()
    cfg.add_edge(SOURCE, 0, 1.0)
    cfg.add_edge(0, 1, split)
    cfg.add_edge(0, 2, 1.0 - split)
    cfg.add_edge(1, 3, 1.0)
    cfg.add_edge(2, 3, 1.0)
    cfg.validate()
    return cfg


class EdgeCounters:
    """Per-edge PHV transit counts over the current window."""

    def __init__(self) -> None:
        self._counts: dict[NodeId, dict[NodeId, int]] = defaultdict(lambda: defaultdict(int))

    def record(self, src: NodeId, dst: NodeId, count: int = 1) -> None:
        self._counts[src][dst] += count

    def count(self, src: NodeId, dst: NodeId) -> int:
        return self._counts.get(src, {}).get(dst, 0)

    def out_of(self, src: NodeId) -> int:
        return sum(self._counts.get(src, {}).values())

    def sources(self) -> list[NodeId]:
        return list(self._counts)

    def row(self, src: NodeId) -> dict[NodeId, int]:
        return dict(self._counts.get(src, {}))

    def reset(self) -> None:
        self._counts.clear()


def estimate_transition_matrix(
    counters: EdgeCounters, prior: TransitionMatrix | None = None, gamma: float = 0.5
) -> TransitionMatrix:
    """Estimate transition probabilities from window counters.

    Observed rows take the maximum-likelihood estimate, blended as
    ``gamma * prior + (1 - gamma) * mle`` when a prior row exists. Rows with
    no observations keep the prior.
    """
    prior = prior or {}
    out: TransitionMatrix = {src: dict(row) for src, row in prior.items()}
    for src in counters.sources():
        total = counters.out_of(src)
        if total == 0:
            continue
        mle = {dst: c / total for dst, c in counters.row(src).items()}
        old = prior.get(src)
        if old is None:
            out[src] = mle
        else:
            keys = set(old) | set(mle)
            out[src] = {
                k: gamma * old.get(k, 0.0) + (1.0 - gamma) * mle.get(k, 0.0) for k in keys
            }
    return out
