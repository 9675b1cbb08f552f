"""Fixed-committee engines: round-robin PoA with governance votes, and DPoS delegate schedules.

PoA membership is a function of the chain. Each sealer may carry one
governance vote per block; a proposal passes at a strict majority of the
current set and takes effect when the current rotation completes. DPoS
schedules are a function of the ballot timeline and the tick, so every node
derives the same producer for every slot.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from ..chain import Block, BlockFault, Digest, Transaction, genesis_block, make_block
from ..errors import ConfigError
from ..netsim import Network
from .base import ChainNode, block_body


class GovernanceError(ValueError):
    pass


class ChangeKind(str, enum.Enum):
    ADD = "add"
    REMOVE = "remove"


@dataclass(frozen=True)
class AuthoritySet:
    members: tuple[int, ...]
    epoch: int = 0
    epoch_start: int = 0

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("authority set must not be empty")
        if len(set(self.members)) != len(self.members):
            raise ValueError("authority set has duplicate members")

    @property
    def epoch_end(self) -> int:
        """First slot of the next epoch: one full rotation after ``epoch_start``."""
        return self.epoch_start + len(self.members)


def poa_sealer(aset: AuthoritySet, slot: int) -> int:
    return aset.members[slot % len(aset.members)]


@dataclass(frozen=True)
class GovernanceProposal:
    kind: ChangeKind
    subject: int
    votes: frozenset[int] = frozenset()

    def passed(self, aset: AuthoritySet) -> bool:
        return 2 * len(self.votes & set(aset.members)) > len(aset.members)


def governance_vote(aset: AuthoritySet, proposal: GovernanceProposal, voter: int) -> GovernanceProposal:
    """Add ``voter``'s yes vote; non-members and invalid subjects raise GovernanceError."""
    if voter not in aset.members:
        raise GovernanceError(f"node {voter} is not an authority")
    if proposal.kind is ChangeKind.REMOVE:
        if proposal.subject not in aset.members:
            raise GovernanceError(f"node {proposal.subject} is not an authority")
        if len(aset.members) == 1:
            raise GovernanceError("cannot remove the last authority")
    elif proposal.subject in aset.members:
        raise GovernanceError(f"node {proposal.subject} is already an authority")
    return replace(proposal, votes=proposal.votes | {voter})


def apply_change(aset: AuthoritySet, proposal: GovernanceProposal) -> AuthoritySet:
    if proposal.kind is ChangeKind.ADD:
        if proposal.subject in aset.members:
            return aset
        return replace(aset, members=aset.members + (proposal.subject,))
    members = tuple(m for m in aset.members if m != proposal.subject)
    if not members:
        return aset
    return replace(aset, members=members)


def governance_tx(kind: ChangeKind, subject: int) -> Transaction:
    return Transaction.from_payload(b"gov|%s|%d" % (kind.value.encode(), subject))


def parse_governance(tx: Transaction) -> tuple[ChangeKind, int] | None:
    parts = tx.payload.split(b"|")
    if len(parts) != 3 or parts[0] != b"gov":
        return None
    try:
        return ChangeKind(parts[1].decode()), int(parts[2])
    except ValueError:
        return None


@dataclass(frozen=True)
class GovernanceState:
    """Authority set plus open and passed proposals, as of some block."""

    aset: AuthoritySet
    open: tuple[GovernanceProposal, ...] = ()
    passed: tuple[GovernanceProposal, ...] = ()
    rejected_votes: int = 0

    def advance_to(self, slot: int) -> "GovernanceState":
        """Roll epoch boundaries up to ``slot``, applying passed changes at the first one."""
        state = self
        while slot >= state.aset.epoch_end:
            aset = state.aset
            for p in state.passed:
                aset = apply_change(aset, p)
            aset = replace(aset, epoch=aset.epoch + 1, epoch_start=state.aset.epoch_end)
            state = replace(state, aset=aset, passed=())
        return state

    def with_vote(self, voter: int, kind: ChangeKind, subject: int) -> "GovernanceState":
        current = next((p for p in self.open if p.kind is kind and p.subject == subject), None)
        proposal = current or GovernanceProposal(kind, subject)
        try:
            proposal = governance_vote(self.aset, proposal, voter)
        except GovernanceError:
            return replace(self, rejected_votes=self.rejected_votes + 1)
        others = tuple(p for p in self.open if p is not current)
        if proposal.passed(self.aset):
            return replace(self, open=others, passed=self.passed + (proposal,))
        return replace(self, open=others + (proposal,))


@dataclass
class VotePlan:
    """Authorities in ``voters`` vote for the change when sealing at or after ``from_slot``."""

    kind: str
    subject: int
    voters: list[int]
    from_slot: int = 0


@dataclass
class PoaParams:
    authorities: list[int] = field(default_factory=list)
    slot_ticks: int = 3
    txs_per_block: int = 2
    governance: list[VotePlan] = field(default_factory=list)

    def validate(self, nodes: int, path: str = "engine_params") -> None:
        members = self.authorities or list(range(nodes))
        if len(set(members)) != len(members):
            raise ConfigError("duplicate authority", f"{path}.authorities")
        for i, m in enumerate(members):
            if not 0 <= m < nodes:
                raise ConfigError(f"node id out of range [0, {nodes})", f"{path}.authorities[{i}]")
        if self.slot_ticks < 1:
            raise ConfigError("must be >= 1", f"{path}.slot_ticks")
        if self.txs_per_block < 0:
            raise ConfigError("must be >= 0", f"{path}.txs_per_block")
        for i, plan in enumerate(self.governance):
            if plan.kind not in (ChangeKind.ADD.value, ChangeKind.REMOVE.value):
                raise ConfigError("must be one of: add, remove", f"{path}.governance[{i}].kind")
            if not 0 <= plan.subject < nodes:
                raise ConfigError(f"node id out of range [0, {nodes})", f"{path}.governance[{i}].subject")

    def authority_set(self, nodes: int) -> AuthoritySet:
        return AuthoritySet(tuple(self.authorities or range(nodes)))


class SlotNode(ChainNode):
    """Shared slot bookkeeping for schedule-driven producers."""

    slot_ticks = 1

    def slot_of(self, block: Block) -> int:
        return block.header.timestamp // self.slot_ticks

    def slot_fault(self, block: Block, parent: Block) -> BlockFault | None:
        ts = block.header.timestamp
        if ts % self.slot_ticks or self.slot_of(block) <= self.slot_of(parent):
            return BlockFault.SLOT_REGRESSION
        return None


class PoaNode(SlotNode):
    def __init__(self, node_id: int, net: Network, genesis: Block, params: PoaParams) -> None:
        super().__init__(node_id, net, genesis, params.txs_per_block)
        self.params = params
        self.slot_ticks = params.slot_ticks
        self.states: dict[Digest, GovernanceState] = {genesis.digest: GovernanceState(params.authority_set(net.n))}
        self.sealed = 0

    def state_for_slot(self, parent: Digest, slot: int) -> GovernanceState:
        return self.states[parent].advance_to(slot)

    def check_block(self, block: Block, parent: Block) -> BlockFault | None:
        fault = self.slot_fault(block, parent)
        if fault is not None:
            return fault
        state = self.state_for_slot(parent.digest, self.slot_of(block))
        if block.header.proposer != poa_sealer(state.aset, self.slot_of(block)):
            return BlockFault.UNAUTHORIZED_SEALER
        return None

    def on_block_stored(self, block: Block) -> None:
        state = self.state_for_slot(block.parent, self.slot_of(block))
        for tx in block.transactions:
            change = parse_governance(tx)
            if change is not None:
                state = state.with_vote(block.header.proposer, *change)
        self.states[block.digest] = state

    def pending_votes(self, parent: Digest, slot: int) -> list[Transaction]:
        state = self.state_for_slot(parent, slot)
        out = []
        for plan in self.params.governance:
            if self.id not in plan.voters or slot < plan.from_slot:
                continue
            kind = ChangeKind(plan.kind)
            done = any(p.kind is kind and p.subject == plan.subject and self.id in p.votes
                       for p in state.open)
            done = done or any(p.kind is kind and p.subject == plan.subject for p in state.passed)
            applied = (plan.subject in state.aset.members) == (kind is ChangeKind.ADD)
            if not done and not applied:
                out.append(governance_tx(kind, plan.subject))
                break
        return out

    def on_tick(self, tick: int) -> None:
        if tick == 0 or tick % self.slot_ticks:
            return
        slot = tick // self.slot_ticks
        parent = self.head_block()
        state = self.state_for_slot(parent.digest, slot)
        if poa_sealer(state.aset, slot) != self.id:
            if self.byzantine:
                # out-of-turn seal; honest nodes must refuse it
                self.broadcast("block", self.new_block(parent, tick, tag=b"|rogue"))
            return
        txs = block_body(self.id, parent.height + 1, tick, self.txs_per_block)
        txs += self.pending_votes(parent.digest, slot)
        self.sealed += 1
        self.accept_own(make_block(parent, txs, timestamp=tick, proposer=self.id))


class PoaWorld:
    engine = "poa"

    def __init__(self, net: Network, params: PoaParams) -> None:
        self.net = net
        self.params = params
        self.genesis = genesis_block(0)
        self.nodes = [PoaNode(i, net, self.genesis, params) for i in range(net.n)]

    def honest_nodes(self) -> list[ChainNode]:
        return [n for n in self.nodes if not self.net.is_byzantine(n.id)]

    def metrics(self) -> dict:
        honest = self.honest_nodes()
        observer = honest[0] if honest else self.nodes[0]
        slots, produced = slot_counts(self.net, honest or self.nodes, self.params.slot_ticks)
        return {
            "rejected_blocks": sum(sum(n.rejected.values()) for n in honest),
            "unauthorized_rejections": sum(n.rejected[BlockFault.UNAUTHORIZED_SEALER.value] for n in honest),
            "missed_slots": max(0, slots - produced),
            "authorities": list(observer.states[observer.head].aset.members),
            "authority_epoch": observer.states[observer.head].aset.epoch,
        }


# -- DPoS ------------------------------------------------------------------------

@dataclass(frozen=True)
class DelegateBallot:
    voter: int
    weight: int
    approvals: frozenset[int]

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise ValueError("ballot weight must be positive")
        if not self.approvals:
            raise ValueError("ballot must approve at least one candidate")


@dataclass(frozen=True)
class ProducerSchedule:
    delegates: tuple[int, ...]
    slot_ticks: int = 3
    round: int = 0

    def producer(self, slot: int) -> int:
        return self.delegates[slot % len(self.delegates)]


DEFAULT_DELEGATES = 21
DEFAULT_ELECTION_INTERVAL = 126


def candidate_scores(ballots: Iterable[DelegateBallot]) -> dict[int, int]:
    scores: dict[int, int] = {}
    for b in ballots:
        for c in b.approvals:
            scores[c] = scores.get(c, 0) + b.weight
    return scores


def dpos_elect(ballots: Sequence[DelegateBallot], n: int = DEFAULT_DELEGATES, slot_ticks: int = 3,
               round: int = 0) -> ProducerSchedule:
    """Approval voting: each ballot gives its full weight to every approved candidate."""
    if not ballots:
        raise ValueError("election needs at least one ballot")
    if n < 1:
        raise ValueError("delegate count must be >= 1")
    scores = candidate_scores(ballots)
    ranked = sorted(scores, key=lambda c: (-scores[c], c))
    return ProducerSchedule(tuple(ranked[:n]), slot_ticks, round)


@dataclass
class BallotSpec:
    voter: int
    weight: int
    approvals: list[int]

    def ballot(self) -> DelegateBallot:
        return DelegateBallot(self.voter, self.weight, frozenset(self.approvals))


@dataclass
class BallotUpdate:
    """From ``at_tick`` on, ``ballots`` replace the ballots of the same voters."""

    at_tick: int
    ballots: list[BallotSpec]


@dataclass
class DposParams:
    ballots: list[BallotSpec] = field(default_factory=list)
    delegates: int = DEFAULT_DELEGATES
    slot_ticks: int = 3
    election_interval: int = DEFAULT_ELECTION_INTERVAL
    ballot_updates: list[BallotUpdate] = field(default_factory=list)
    txs_per_block: int = 2

    def validate(self, nodes: int, path: str = "engine_params") -> None:
        if not self.ballots and nodes < 1:
            raise ConfigError("needs at least one ballot", f"{path}.ballots")
        for name in ("delegates", "slot_ticks", "election_interval"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", f"{path}.{name}")
        for i, spec in enumerate(self.ballots):
            self._check_ballot(spec, nodes, f"{path}.ballots[{i}]")
        for j, upd in enumerate(self.ballot_updates):
            if upd.at_tick < 0:
                raise ConfigError("must be >= 0", f"{path}.ballot_updates[{j}].at_tick")
            for i, spec in enumerate(upd.ballots):
                self._check_ballot(spec, nodes, f"{path}.ballot_updates[{j}].ballots[{i}]")

    @staticmethod
    def _check_ballot(spec: BallotSpec, nodes: int, path: str) -> None:
        if spec.weight <= 0:
            raise ConfigError("must be > 0", f"{path}.weight")
        if not spec.approvals:
            raise ConfigError("must approve at least one candidate", f"{path}.approvals")
        for c in spec.approvals:
            if not 0 <= c < nodes:
                raise ConfigError(f"candidate {c} is not a node id in [0, {nodes})", f"{path}.approvals")

    def ballots_at(self, tick: int, nodes: int) -> list[DelegateBallot]:
        base = self.ballots or [BallotSpec(i, 1, [i]) for i in range(nodes)]
        current = {b.voter: b for b in base}
        for upd in sorted(self.ballot_updates, key=lambda u: u.at_tick):
            if upd.at_tick > tick:
                break
            current.update((b.voter, b) for b in upd.ballots)
        return [current[v].ballot() for v in sorted(current)]

    def schedule_at(self, tick: int, nodes: int) -> ProducerSchedule:
        """Schedule in force at ``tick``: elected from the ballots at the start of its interval."""
        round = tick // self.election_interval
        ballots = self.ballots_at(round * self.election_interval, nodes)
        return dpos_elect(ballots, self.delegates, self.slot_ticks, round)


class DposNode(SlotNode):
    def __init__(self, node_id: int, net: Network, genesis: Block, params: DposParams) -> None:
        super().__init__(node_id, net, genesis, params.txs_per_block)
        self.params = params
        self.slot_ticks = params.slot_ticks
        self._schedules: dict[int, ProducerSchedule] = {}
        self.produced = 0

    def schedule(self, tick: int) -> ProducerSchedule:
        round = tick // self.params.election_interval
        if round not in self._schedules:
            self._schedules[round] = self.params.schedule_at(tick, self.net.n)
        return self._schedules[round]

    def producer_for_slot(self, slot: int) -> int:
        return self.schedule(slot * self.slot_ticks).producer(slot)

    def check_block(self, block: Block, parent: Block) -> BlockFault | None:
        fault = self.slot_fault(block, parent)
        if fault is not None:
            return fault
        if block.header.proposer != self.producer_for_slot(self.slot_of(block)):
            return BlockFault.UNAUTHORIZED_SEALER
        return None

    def on_tick(self, tick: int) -> None:
        if tick == 0 or tick % self.slot_ticks:
            return
        slot = tick // self.slot_ticks
        if self.producer_for_slot(slot) != self.id or self.byzantine:
            # Byzantine delegates withhold their blocks
            return
        self.produced += 1
        self.accept_own(self.new_block(self.head_block(), tick))


class DposWorld:
    engine = "dpos"

    def __init__(self, net: Network, params: DposParams) -> None:
        self.net = net
        self.params = params
        self.genesis = genesis_block(0)
        self.nodes = [DposNode(i, net, self.genesis, params) for i in range(net.n)]

    def honest_nodes(self) -> list[ChainNode]:
        return [n for n in self.nodes if not self.net.is_byzantine(n.id)]

    def metrics(self) -> dict:
        honest = self.honest_nodes()
        observer = honest[0] if honest else self.nodes[0]
        slots, produced = slot_counts(self.net, honest or self.nodes, self.params.slot_ticks)
        final = observer.schedule(max(0, self.net.now))
        return {
            "rejected_blocks": sum(sum(n.rejected.values()) for n in honest),
            "missed_slots": max(0, slots - produced),
            "slots": slots,
            "delegates": list(final.delegates),
            "election_round": final.round,
        }


def slot_counts(net: Network, nodes: Sequence[ChainNode], slot_ticks: int) -> tuple[int, int]:
    """Slots elapsed (ticks 1..now) and blocks on the best chain any of ``nodes`` holds."""
    slots = net.now // slot_ticks
    produced = max(n.store.height(n.head) for n in nodes)
    return slots, produced


def slot_throughput(produced_blocks: int, slots: int) -> float:
    return produced_blocks / slots if slots else 0.0
