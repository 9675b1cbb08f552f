"""Proof of stake: registry, stake-weighted proposer draws, two-thirds finality, slashing."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from ..chain import Block, BlockFault, Digest, Transaction, genesis_block, hash_bytes, make_block
from ..errors import ConfigError, NoEligibleValidators
from ..netsim import Envelope, Network
from ..rng import SplitMix64, stream
from .base import ChainNode, block_body

DEFAULT_MIN_STAKE = 32


@dataclass(frozen=True)
class Validator:
    node: int
    stake: int
    slashed: bool = False

    @property
    def effective(self) -> int:
        return 0 if self.slashed else self.stake


@dataclass(frozen=True)
class StakeRegistry:
    validators: tuple[Validator, ...]
    min_stake: int = DEFAULT_MIN_STAKE

    def __post_init__(self) -> None:
        nodes = [v.node for v in self.validators]
        if len(set(nodes)) != len(nodes):
            raise ValueError("validator node ids must be unique")

    @classmethod
    def from_stakes(cls, stakes: Sequence[int] | dict[int, int], min_stake: int = DEFAULT_MIN_STAKE) -> "StakeRegistry":
        items = stakes.items() if isinstance(stakes, dict) else enumerate(stakes)
        validators = []
        for node, stake in items:
            if stake == 0:
                continue
            if stake < min_stake:
                raise ConfigError(f"stake {stake} below min_stake {min_stake}", f"stakes[{node}]")
            validators.append(Validator(node, stake))
        return cls(tuple(validators), min_stake)

    def get(self, node: int) -> Validator | None:
        for v in self.validators:
            if v.node == node:
                return v
        return None

    def effective_stake(self, node: int) -> int:
        v = self.get(node)
        return 0 if v is None else v.effective

    @property
    def total_effective(self) -> int:
        return sum(v.effective for v in self.validators)


def select_validator(reg: StakeRegistry, rng: SplitMix64) -> int:
    """Stake-proportional draw: first validator whose running stake sum exceeds a uniform point in [0, total)."""
    total = reg.total_effective
    if total <= 0:
        raise NoEligibleValidators("no validator has effective stake")
    point = rng.randrange(total)
    running = 0
    for v in reg.validators:
        running += v.effective
        if running > point:
            return v.node
    raise AssertionError("unreachable: running sum reached total")


@dataclass(frozen=True)
class FinalityVote:
    voter: int
    target: Digest
    height: int
    round: int


@dataclass(frozen=True)
class Checkpoint:
    block: Digest
    height: int
    justifying_stake: int


@dataclass(frozen=True)
class Finalized:
    checkpoint: Checkpoint
    invalid_votes: int = 0


@dataclass(frozen=True)
class Pending:
    stake_for: int
    invalid_votes: int = 0


def has_supermajority(stake_for: int, total: int) -> bool:
    """Strictly more than two thirds, in exact integer arithmetic."""
    return total > 0 and 3 * stake_for > 2 * total


def tally_finality(votes: Iterable[FinalityVote], reg: StakeRegistry, target: Digest,
                   height: int, round: int) -> Finalized | Pending:
    voters: set[int] = set()
    invalid = 0
    for vote in votes:
        if vote.height != height or vote.round != round:
            continue
        if reg.effective_stake(vote.voter) <= 0:
            invalid += 1
            continue
        if vote.target == target:
            voters.add(vote.voter)
    stake_for = sum(reg.effective_stake(v) for v in voters)
    if has_supermajority(stake_for, reg.total_effective):
        return Finalized(Checkpoint(target, height, stake_for), invalid)
    return Pending(stake_for, invalid)


@dataclass(frozen=True)
class SlashingEvent:
    voter: int
    height: int
    round: int
    targets: tuple[Digest, ...]


def detect_equivocation(votes: Iterable[FinalityVote]) -> list[SlashingEvent]:
    """One event per voter that backed two or more targets at the same (height, round)."""
    seen: dict[tuple[int, int, int], list[Digest]] = defaultdict(list)
    for vote in votes:
        targets = seen[(vote.voter, vote.height, vote.round)]
        if vote.target not in targets:
            targets.append(vote.target)
    return [SlashingEvent(voter, h, r, tuple(sorted(targets)))
            for (voter, h, r), targets in sorted(seen.items()) if len(targets) > 1]


def slash(reg: StakeRegistry, event: SlashingEvent | int, fraction: float = 1.0) -> StakeRegistry:
    """Forfeit ceil(fraction * stake); full forfeiture marks the validator slashed."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("slash fraction must be in (0, 1]")
    node = event if isinstance(event, int) else event.voter
    out = []
    for v in reg.validators:
        if v.node == node and not v.slashed:
            remaining = v.stake - math.ceil(fraction * v.stake)
            v = replace(v, stake=max(remaining, 0), slashed=remaining <= 0 or fraction >= 1.0)
            if v.slashed:
                v = replace(v, stake=0)
        out.append(v)
    return replace(reg, validators=tuple(out))


# -- evidence carried in blocks ------------------------------------------------

def evidence_tx(event: SlashingEvent) -> Transaction:
    body = b"slash|%d|%d|%d|" % (event.voter, event.height, event.round)
    return Transaction.from_payload(body + b",".join(t.hex().encode() for t in event.targets))


def parse_evidence(tx: Transaction) -> SlashingEvent | None:
    if not tx.payload.startswith(b"slash|"):
        return None
    try:
        _, voter, height, rnd, targets = tx.payload.split(b"|", 4)
        return SlashingEvent(int(voter), int(height), int(rnd),
                             tuple(bytes.fromhex(t.decode()) for t in targets.split(b",")))
    except ValueError:
        return None


def registry_after(reg: StakeRegistry, block: Block, fraction: float) -> StakeRegistry:
    for tx in block.transactions:
        event = parse_evidence(tx)
        if event is not None:
            reg = slash(reg, event, fraction)
    return reg


# -- finality gadget shared with the hybrid engine -------------------------------

class VoteBook:
    """Votes received by one node, bucketed by (height, round)."""

    def __init__(self) -> None:
        self.buckets: dict[tuple[int, int], list[FinalityVote]] = defaultdict(list)
        self.by_key: dict[tuple[int, int, int], set[Digest]] = defaultdict(set)
        self.offenders: set[int] = set()

    def add(self, vote: FinalityVote) -> SlashingEvent | None:
        targets = self.by_key[(vote.voter, vote.height, vote.round)]
        if vote.target in targets:
            return None
        targets.add(vote.target)
        self.buckets[(vote.height, vote.round)].append(vote)
        if len(targets) == 2 and vote.voter not in self.offenders:
            self.offenders.add(vote.voter)
            return SlashingEvent(vote.voter, vote.height, vote.round, tuple(sorted(targets)))
        return None


@dataclass
class PosParams:
    stakes: list[int] = field(default_factory=list)
    min_stake: int = DEFAULT_MIN_STAKE
    slot_ticks: int = 4
    slash_fraction: float = 1.0
    txs_per_block: int = 2

    def validate(self, nodes: int, path: str = "engine_params") -> None:
        if self.stakes and len(self.stakes) != nodes:
            raise ConfigError(f"needs one entry per node ({nodes})", f"{path}.stakes")
        for i, s in enumerate(self.stakes):
            if s < 0:
                raise ConfigError("stake must be >= 0", f"{path}.stakes[{i}]")
            if 0 < s < self.min_stake:
                raise ConfigError(f"stake below min_stake {self.min_stake}", f"{path}.stakes[{i}]")
        if self.min_stake < 1:
            raise ConfigError("must be >= 1", f"{path}.min_stake")
        if self.slot_ticks < 1:
            raise ConfigError("must be >= 1", f"{path}.slot_ticks")
        if not 0.0 < self.slash_fraction <= 1.0:
            raise ConfigError("must be in (0, 1]", f"{path}.slash_fraction")
        if self.txs_per_block < 0:
            raise ConfigError("must be >= 0", f"{path}.txs_per_block")

    def registry(self, nodes: int) -> StakeRegistry:
        stakes = self.stakes or [self.min_stake * 3] * nodes
        return StakeRegistry.from_stakes(stakes, self.min_stake)


def proposer_for_slot(reg: StakeRegistry, seed: int, slot: int) -> int:
    return select_validator(reg, stream(seed, "proposer", slot))


class PosNode(ChainNode):
    def __init__(self, node_id: int, net: Network, genesis: Block, params: PosParams,
                 registry: StakeRegistry) -> None:
        super().__init__(node_id, net, genesis, params.txs_per_block)
        self.params = params
        self.genesis_registry = registry
        self.chain_registry: dict[Digest, StakeRegistry] = {genesis.digest: registry}
        self.local_registry = registry
        self.votes = VoteBook()
        self.voted_heights: set[int] = set()
        self.evidence: list[SlashingEvent] = []
        self.slashing_events = 0
        self.invalid_votes = 0
        self.proposals = 0

    # chain-derived registry ------------------------------------------------
    def registry_at(self, digest: Digest) -> StakeRegistry:
        return self.chain_registry[digest]

    def on_block_stored(self, block: Block) -> None:
        reg = registry_after(self.chain_registry[block.parent], block, self.params.slash_fraction)
        self.chain_registry[block.digest] = reg
        for tx in block.transactions:
            event = parse_evidence(tx)
            if event is not None and event.voter not in self.votes.offenders:
                self.votes.offenders.add(event.voter)
                self.local_registry = slash(self.local_registry, event, self.params.slash_fraction)
        self.after_block(block)

    def after_block(self, block: Block) -> None:
        self.try_finalize_block(block)

    def slot_of(self, block: Block) -> int:
        return block.header.timestamp // self.params.slot_ticks

    def check_block(self, block: Block, parent: Block) -> BlockFault | None:
        if not self.store.is_ancestor(self.store.finalized, parent.digest):
            return BlockFault.CONFLICTS_FINALIZED
        ts = block.header.timestamp
        if ts % self.params.slot_ticks or self.slot_of(block) <= self.slot_of(parent):
            return BlockFault.SLOT_REGRESSION
        try:
            expected = proposer_for_slot(self.registry_at(parent.digest), self.net.seed, self.slot_of(block))
        except NoEligibleValidators:
            return BlockFault.UNAUTHORIZED_SEALER
        if block.header.proposer != expected:
            return BlockFault.UNAUTHORIZED_SEALER
        return None

    # slot loop ------------------------------------------------------------
    def on_tick(self, tick: int) -> None:
        if tick == 0 or tick % self.params.slot_ticks:
            return
        self.pos_chain_tick(tick)

    def pos_chain_tick(self, tick: int) -> Block | None:
        slot = tick // self.params.slot_ticks
        parent = self.head_block()
        if proposer_for_slot(self.registry_at(parent.digest), self.net.seed, slot) != self.id:
            return None
        known = {tx.id for b in self.store.chain(parent.digest) for tx in b.transactions}
        extra = [evidence_tx(e) for e in self.evidence]
        extra = [tx for tx in extra if tx.id not in known]
        txs = block_body(self.id, parent.height + 1, tick, self.txs_per_block) + extra
        block = make_block(parent, txs, timestamp=tick, proposer=self.id)
        self.proposals += 1
        self.accept_own(block)
        return block

    # voting -----------------------------------------------------------------
    def maybe_vote(self, block: Block) -> None:
        if block.digest != self.store.fork_choice() or block.height in self.voted_heights:
            return
        if self.local_registry.effective_stake(self.id) <= 0:
            return
        self.voted_heights.add(block.height)
        self.cast(FinalityVote(self.id, block.digest, block.height, self.slot_of(block)))
        if self.byzantine:
            fake = hash_bytes(b"equivocate" + block.digest)
            self.cast(FinalityVote(self.id, fake, block.height, self.slot_of(block)))

    def cast(self, vote: FinalityVote) -> None:
        self.broadcast("vote", vote)
        self.record_vote(vote)

    def try_finalize_block(self, block: Block) -> None:
        self.maybe_vote(block)
        for (h, r), bucket in list(self.votes.buckets.items()):
            if h == block.height and any(v.target == block.digest for v in bucket):
                self.tally(block.digest, h, r)

    def record_vote(self, vote: FinalityVote) -> None:
        if self.local_registry.effective_stake(vote.voter) <= 0:
            self.invalid_votes += 1
            return
        event = self.votes.add(vote)
        if event is not None:
            self.slashing_events += 1
            self.evidence.append(event)
            self.local_registry = slash(self.local_registry, event, self.params.slash_fraction)
        if vote.target in self.store:
            self.tally(vote.target, vote.height, vote.round)

    def tally(self, target: Digest, height: int, round: int) -> Finalized | Pending:
        result = tally_finality(self.votes.buckets[(height, round)], self.local_registry, target, height, round)
        if isinstance(result, Finalized) and target in self.store:
            if self.store.height(target) > self.store.height(self.store.finalized):
                self.finalize(target)
        return result

    def on_protocol_message(self, env: Envelope) -> None:
        if env.kind == "vote":
            self.record_vote(env.payload)


class PosWorld:
    engine = "pos"

    def __init__(self, net: Network, params: PosParams) -> None:
        self.net = net
        self.params = params
        self.genesis = genesis_block(0)
        registry = params.registry(net.n)
        if registry.total_effective <= 0:
            raise NoEligibleValidators("registry has no stake")
        self.registry = registry
        self.nodes = [PosNode(i, net, self.genesis, params, registry) for i in range(net.n)]

    def honest_nodes(self) -> list[ChainNode]:
        return [n for n in self.nodes if not self.net.is_byzantine(n.id)]

    def metrics(self) -> dict:
        honest = self.honest_nodes()
        return {
            "rejected_blocks": sum(sum(n.rejected.values()) for n in honest),
            "slashing_events": max((n.slashing_events for n in honest), default=0),
            "invalid_votes": sum(n.invalid_votes for n in honest),
        }
