"""PoW miners propose; staked validators finalize checkpoints every ``finality_period`` blocks.

Honest validators lock on the first target they vote for at a checkpoint
height and repeat that vote in later rounds, so honest stake never backs two
blocks at one height. Rounds advance on a local timeout or on seeing a vote
from a later round.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..chain import Block, BlockFault, ChainStore, Digest, genesis_block, hash_bytes
from ..errors import ConfigError, NoEligibleValidators
from ..netsim import Envelope, Network
from .base import ChainNode
from .pow import PowNode, PowParams
from .stake import (DEFAULT_MIN_STAKE, Finalized, FinalityVote, Pending, StakeRegistry, VoteBook,
                    slash, tally_finality)


@dataclass
class HybridParams(PowParams):
    stakes: list[int] = field(default_factory=list)
    min_stake: int = DEFAULT_MIN_STAKE
    finality_period: int = 5
    vote_depth: int = 2
    vote_timeout: int = 40
    slash_fraction: float = 1.0

    def validate(self, nodes: int, path: str = "engine_params") -> None:
        super().validate(nodes, path)
        if self.stakes and len(self.stakes) != nodes:
            raise ConfigError(f"needs one entry per node ({nodes})", f"{path}.stakes")
        for i, s in enumerate(self.stakes):
            if s < 0 or 0 < s < self.min_stake:
                raise ConfigError(f"stake must be 0 or >= min_stake {self.min_stake}", f"{path}.stakes[{i}]")
        if self.finality_period < 1:
            raise ConfigError("must be >= 1", f"{path}.finality_period")
        if self.vote_depth < 0:
            raise ConfigError("must be >= 0", f"{path}.vote_depth")
        if self.vote_timeout < 1:
            raise ConfigError("must be >= 1", f"{path}.vote_timeout")
        if not 0.0 < self.slash_fraction <= 1.0:
            raise ConfigError("must be in (0, 1]", f"{path}.slash_fraction")

    def registry(self, nodes: int) -> StakeRegistry:
        stakes = self.stakes or [self.min_stake * 3] * nodes
        return StakeRegistry.from_stakes(stakes, self.min_stake)


def reorg_guard(store: ChainStore, candidate_tip: Digest) -> bool:
    """Accept only tips that descend from the finalized checkpoint."""
    return store.is_ancestor(store.finalized, candidate_tip)


class HybridNode(PowNode):
    def __init__(self, node_id: int, net: Network, genesis: Block, params: HybridParams,
                 registry: StakeRegistry) -> None:
        super().__init__(node_id, net, genesis, params)
        self.registry = registry
        self.votes = VoteBook()
        self.locks: dict[int, Digest] = {}
        self.rounds: dict[int, int] = {}
        self.round_started: dict[int, int] = {}
        self.slashing_events = 0
        self.invalid_votes = 0
        self.finality_rounds = 0

    @property
    def hparams(self) -> HybridParams:
        return self.params  # type: ignore[return-value]

    def checkpoint_height(self) -> int:
        return self.store.height(self.store.finalized) + self.hparams.finality_period

    def check_block(self, block: Block, parent: Block) -> BlockFault | None:
        if not reorg_guard(self.store, parent.digest):
            return BlockFault.CONFLICTS_FINALIZED
        return super().check_block(block, parent)

    def on_block_stored(self, block: Block) -> None:
        for (h, r), bucket in list(self.votes.buckets.items()):
            if h == block.height and any(v.target == block.digest for v in bucket):
                self.finality_round(h, r, block.digest)

    def on_tick(self, tick: int) -> None:
        super().on_tick(tick)
        self.vote_tick(tick)

    # voting -----------------------------------------------------------------
    def is_validator(self) -> bool:
        return self.registry.effective_stake(self.id) > 0

    def vote_tick(self, tick: int) -> None:
        if not self.is_validator():
            return
        h = self.checkpoint_height()
        if h not in self.locks:
            if self.store.height(self.head) < h + self.hparams.vote_depth:
                return
            self.locks[h] = self.store.ancestor_at(self.head, h)
            self.rounds[h] = 0
            self.round_started[h] = tick
            self.cast_votes(h)
        elif tick - self.round_started[h] >= self.hparams.vote_timeout:
            self.enter_round(h, self.rounds[h] + 1, tick)

    def enter_round(self, h: int, r: int, tick: int) -> None:
        self.rounds[h] = r
        self.round_started[h] = tick
        self.cast_votes(h)

    def cast_votes(self, h: int) -> None:
        r = self.rounds[h]
        targets = [self.locks[h]]
        if self.byzantine:
            private = [b.digest for b in self.private if b.height == h]
            targets.append(private[0] if private else hash_bytes(b"equivocate" + self.locks[h]))
        for target in targets:
            vote = FinalityVote(self.id, target, h, r)
            self.broadcast("vote", vote)
            self.record_vote(vote)

    def record_vote(self, vote: FinalityVote) -> None:
        if self.registry.effective_stake(vote.voter) <= 0:
            self.invalid_votes += 1
            return
        event = self.votes.add(vote)
        if event is not None:
            self.slashing_events += 1
            self.registry = slash(self.registry, event, self.hparams.slash_fraction)
        h = vote.height
        if h in self.locks and vote.round > self.rounds[h] and h == self.checkpoint_height():
            self.enter_round(h, vote.round, self.net.now)
        if vote.target in self.store:
            self.finality_round(h, vote.round, vote.target)

    def finality_round(self, height: int, round: int, target: Digest) -> Finalized | Pending:
        """Tally ``target`` at (height, round); on success advance local finality."""
        self.finality_rounds += 1
        result = tally_finality(self.votes.buckets[(height, round)], self.registry, target, height, round)
        if isinstance(result, Finalized) and height > self.store.height(self.store.finalized):
            self.finalize(target)
        return result

    def on_protocol_message(self, env: Envelope) -> None:
        if env.kind == "vote":
            self.record_vote(env.payload)


class HybridWorld:
    engine = "hybrid"

    def __init__(self, net: Network, params: HybridParams) -> None:
        self.net = net
        self.params = params
        self.genesis = genesis_block(params.difficulty_bits)
        registry = params.registry(net.n)
        if registry.total_effective <= 0:
            raise NoEligibleValidators("registry has no stake")
        self.nodes = [HybridNode(i, net, self.genesis, params, registry) for i in range(net.n)]

    def honest_nodes(self) -> list[ChainNode]:
        return [n for n in self.nodes if not self.net.is_byzantine(n.id)]

    def metrics(self) -> dict:
        honest = self.honest_nodes()
        return {
            "rejected_blocks": sum(sum(n.rejected.values()) for n in honest),
            "attack_releases": sum(n.releases for n in self.nodes),
            "attack_abandoned": sum(n.abandoned for n in self.nodes),
            "slashing_events": max((n.slashing_events for n in honest), default=0),
            "invalid_votes": sum(n.invalid_votes for n in honest),
        }
