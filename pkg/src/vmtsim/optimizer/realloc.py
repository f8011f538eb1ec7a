"""PMU reallocation between VMTs.

A plan keeps each VMT's current PMUs up to its new count and releases the
lowest ids first. Released PMUs go transient, drain, become free and only
then associate with their new VMT. Lookup tables are updated at the moment
of deassociation and of association.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from vmtsim.dataplane.pmu import Pmu, PmuState, PmuStateKind
from vmtsim.optimizer.solver import AllocationError

if TYPE_CHECKING:
    from vmtsim.dataplane.interconnect import Interconnect
    from vmtsim.dataplane.vmt import Vmt

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Move:
    """One PMU changing hands; ``None`` stands for the free pool."""

    pmu_id: int
    src: int | None
    dst: int | None


@dataclass
class TransitionPlan:
    """PMU moves taking the current association to a new allocation."""

    moves: list[Move] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.moves

    def releases(self) -> list[Move]:
        return [m for m in self.moves if m.src is not None]

    def grants(self) -> list[Move]:
        return [m for m in self.moves if m.dst is not None]

    def to_dict(self) -> dict[str, Any]:
        return {"moves": [{"pmu": m.pmu_id, "from": m.src, "to": m.dst} for m in self.moves]}


def plan_transition(
    current: Mapping[int, Iterable[int]], new_counts: Mapping[int, int], free_pmus: Iterable[int]
) -> TransitionPlan:
    """Churn-minimizing plan from ``current`` associations to ``new_counts``.

    Receivers draw from the free pool first (lowest ids), then from PMUs
    released by other VMTs, both in VMT id order.

    Raises:
        AllocationError: If the new counts need more PMUs than exist
    """
    owned = {vid: sorted(pmus) for vid, pmus in current.items()}
    free = sorted(free_pmus)
    total = sum(len(p) for p in owned.values()) + len(free)
    if sum(new_counts.get(v, 0) for v in set(owned) | set(new_counts)) > total:
        raise AllocationError(f"Allocation {dict(new_counts)} exceeds the {total} PMUs available")

    released: list[tuple[int, int]] = []
    for vid in sorted(owned):
        excess = len(owned[vid]) - new_counts.get(vid, 0)
        if excess > 0:
            released.extend((pmu, vid) for pmu in owned[vid][:excess])

    pool: list[tuple[int, int | None]] = [(p, None) for p in free] + [(p, v) for p, v in released]
    moves: list[Move] = []
    taken: set[int] = set()
    for vid in sorted(new_counts):
        deficit = new_counts[vid] - len(owned.get(vid, []))
        while deficit > 0:
            pmu, src = pool.pop(0)
            moves.append(Move(pmu, src, vid))
            taken.add(pmu)
            deficit -= 1
    moves.extend(Move(pmu, vid, None) for pmu, vid in released if pmu not in taken)
    moves.sort(key=lambda m: m.pmu_id)
    return TransitionPlan(moves)


class Reallocator:
    """Drives PMU FSM transitions for a plan across simulated cycles."""

    def __init__(self, pmus: Sequence[Pmu], vmts: Mapping[int, Vmt]) -> None:
        self.pmus = pmus
        self.vmts = vmts
        self._pending: list[Move] = []
        self._draining: set[int] = set()
        self.plans = 0
        self.moves = 0

    @property
    def busy(self) -> bool:
        return bool(self._pending or self._draining)

    def current(self) -> dict[int, list[int]]:
        return {vid: sorted(vmt.pmus) for vid, vmt in self.vmts.items()}

    def free_pmus(self) -> list[int]:
        return [p.pmu_id for p in self.pmus if p.state.kind == PmuStateKind.FREE]

    def counts(self) -> dict[int, int]:
        return {vid: len(vmt.pmus) for vid, vmt in self.vmts.items()}

    def associate(self, pmu: Pmu, vmt_id: int) -> None:
        vmt = self.vmts[vmt_id]
        if not pmu.set_state(PmuState.associated(vmt_id, vmt.mask)):
            raise AllocationError(f"pmu{pmu.pmu_id} cannot associate from {pmu.state.kind.value}")
        vmt.set_pmus(vmt.pmus | {pmu.pmu_id})

    def associate_initial(self, counts: Mapping[int, int]) -> None:
        """Hand out free PMUs in id order, VMTs in id order."""
        free = iter(self.free_pmus())
        for vid in sorted(counts):
            for _ in range(counts[vid]):
                pmu_id = next(free, None)
                if pmu_id is None:
                    raise AllocationError(f"Not enough PMUs for initial allocation {dict(counts)}")
                self.associate(self.pmus[pmu_id], vid)

    def start(self, plan: TransitionPlan) -> None:
        """Deassociate released PMUs now; associations follow in :meth:`progress`."""
        for move in plan.moves:
            if move.src is not None:
                vmt = self.vmts[move.src]
                vmt.set_pmus(vmt.pmus - {move.pmu_id})
                self.pmus[move.pmu_id].set_state(PmuState.transient())
                self._draining.add(move.pmu_id)
            if move.dst is not None:
                self._pending.append(move)
        self.plans += 1
        self.moves += len(plan.moves)
        if not plan.empty:
            logger.info("Reallocation started: %s", plan.to_dict()["moves"])

    def progress(self, net: Interconnect | None = None) -> list[Move]:
        """Release drained PMUs and complete pending associations.

        Returns:
            Moves completed this call
        """
        for pmu_id in sorted(self._draining):
            pmu = self.pmus[pmu_id]
            pmu.inbound = net.pending_for(pmu_id) if net is not None else 0
            if pmu.try_release():
                self._draining.discard(pmu_id)
        done: list[Move] = []
        for move in self._pending:
            pmu = self.pmus[move.pmu_id]
            if pmu.state.kind == PmuStateKind.FREE:
                assert move.dst is not None
                self.associate(pmu, move.dst)
                done.append(move)
        if done:
            self._pending = [m for m in self._pending if m not in done]
            logger.debug("Associations completed: %s", [(m.pmu_id, m.dst) for m in done])
        return done


def reallocate(
    realloc: Reallocator, new_counts: Mapping[int, int], net: Interconnect | None = None
) -> TransitionPlan:
    """Plan and start a transition to ``new_counts``."""
    plan = plan_transition(realloc.current(), new_counts, realloc.free_pmus())
    realloc.start(plan)
    realloc.progress(net)
    return plan
