"""Engine-independent safety checks over the final state of honest nodes.

Only NodeView data is read: each node's block store, the sequence of heads it
adopted, the checkpoints it finalized, and (for replicated state machines) the
digest it executed at each sequence number.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..chain import ChainStore, Digest
from ..engines.base import NodeView

SETTLED_DEPTH = 6
FINALITY_ENGINES = ("pos", "hybrid", "pbft")


@dataclass(frozen=True)
class SafetyReport:
    reorgs: int
    reorg_depth_max: int
    settled_reorgs: int
    fork_events: int
    finality_violations: int
    execution_conflicts: int

    def violations(self, engine: str) -> int:
        """Finality engines answer for finalized or executed state; the rest for settled blocks."""
        if engine in FINALITY_ENGINES:
            return self.finality_violations + self.execution_conflicts
        return self.settled_reorgs


def reorg_depths(store: ChainStore, head_log: list[Digest]) -> list[int]:
    """Depth of every head switch that abandoned blocks (0-depth switches are extensions)."""
    depths = []
    for old, new in zip(head_log, head_log[1:]):
        if store.is_ancestor(old, new):
            continue
        base = store.common_ancestor(old, new)
        depths.append(store.height(old) - store.height(base))
    return depths


def fork_events(store: ChainStore) -> int:
    return sum(len(kids) - 1 for kids in store.children.values() if len(kids) > 1)


def finality_violations(views: list[NodeView]) -> int:
    bad = 0
    checkpoints: dict[int, set[Digest]] = {}
    owner: dict[Digest, ChainStore] = {}
    for v in views:
        head = v.head_log[-1]
        prev = None
        for d in v.finalized_log:
            # the final canonical chain keeps every finalized block, and finality never moves sideways
            if not v.store.is_ancestor(d, head):
                bad += 1
            if prev is not None and not v.store.is_ancestor(prev, d):
                bad += 1
            prev = d
            checkpoints.setdefault(v.store.height(d), set()).add(d)
            owner.setdefault(d, v.store)
    heights = sorted(checkpoints)
    for h in heights:
        bad += len(checkpoints[h]) - 1
    # every pair of finalized blocks across nodes must lie on one chain
    flat = [(h, d) for h in heights for d in sorted(checkpoints[h])]
    for i, (h_lo, lo) in enumerate(flat):
        for h_hi, hi in flat[i + 1:]:
            if h_hi > h_lo and owner[hi].ancestor_at(hi, h_lo) != lo:
                bad += 1
    return bad


def execution_conflicts(views: list[NodeView]) -> int:
    seen: dict[int, set[Digest]] = {}
    for v in views:
        for seq, d in (v.executed or {}).items():
            seen.setdefault(seq, set()).add(d)
    return sum(1 for ds in seen.values() if len(ds) > 1)


def check_safety(views: list[NodeView], settled_depth: int = SETTLED_DEPTH) -> SafetyReport:
    depths = [d for v in views for d in reorg_depths(v.store, v.head_log)]
    return SafetyReport(
        reorgs=len(depths),
        reorg_depth_max=max(depths, default=0),
        settled_reorgs=sum(1 for d in depths if d >= settled_depth),
        fork_events=max((fork_events(v.store) for v in views), default=0),
        finality_violations=finality_violations(views),
        execution_conflicts=execution_conflicts(views),
    )
