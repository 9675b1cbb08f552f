"""Nakamoto proof of work: nonce search, mining races, private-branch attacks."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..chain import (Block, BlockFault, BlockHeader, ValidationRules, adjust_difficulty,
                     block_subsidy, genesis_block)
from ..chain.block import HEADER_PREFIX_SIZE
from ..chain.hashing import hasher
from ..errors import ConfigError
from ..netsim import FixedLatency, LatencyModel, Network, run_loop
from ..rng import SplitMix64, stream
from .base import ChainNode

MAX_REAL_HASH_BITS = 20
_U64 = struct.Struct(">Q")


@dataclass(frozen=True)
class Found:
    nonce: int
    digest: bytes
    attempts: int


@dataclass(frozen=True)
class Exhausted:
    attempts: int


def find_nonce(template: BlockHeader, difficulty_bits: int, start_nonce: int | None = None,
               max_attempts: int = 1 << 64, rng: SplitMix64 | None = None) -> Found | Exhausted:
    """Scan nonces start_nonce, start_nonce+1, ... (mod 2**64) for a qualifying header hash.

    When ``start_nonce`` is None it is drawn from ``rng`` (or 0 without one).
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    if start_nonce is None:
        start_nonce = rng.getrandbits(64) if rng is not None else 0
    packed = template.serialize()
    base = hasher(packed[:HEADER_PREFIX_SIZE])
    proposer = packed[HEADER_PREFIX_SIZE + 8:]
    shift = 256 - difficulty_bits
    nonce = start_nonce & 0xFFFFFFFFFFFFFFFF
    for attempt in range(1, max_attempts + 1):
        h = base.copy()
        h.update(_U64.pack(nonce) + proposer)
        digest = h.digest()
        if difficulty_bits <= 0 or int.from_bytes(digest, "big") >> shift == 0:
            return Found(nonce, digest, attempt)
        nonce = (nonce + 1) & 0xFFFFFFFFFFFFFFFF
    return Exhausted(max_attempts)


def seal(block: Block, rng: SplitMix64) -> Block:
    """Real-hash the header until it meets its own difficulty."""
    bits = block.header.difficulty_bits
    if bits > MAX_REAL_HASH_BITS:
        raise ValueError(f"refusing to real-hash {bits} bits (limit {MAX_REAL_HASH_BITS})")
    result = find_nonce(block.header, bits, rng=rng)
    assert isinstance(result, Found)
    return Block(block.header.with_nonce(result.nonce), block.transactions)


def tick_success_probability(hashpower: int, difficulty_bits: int) -> float:
    """Chance that ``hashpower`` independent attempts include a qualifying hash."""
    return 1.0 - (1.0 - 2.0 ** -difficulty_bits) ** hashpower


# -- engine ----------------------------------------------------------------

@dataclass
class AttackParams:
    attacker: int = 0
    start_tick: int = 0
    give_up: int = 10


@dataclass
class PowParams:
    difficulty_bits: int = 8
    hashpower: list[int] = field(default_factory=list)
    retarget_interval: int = 0
    target_spacing: int = 20
    max_difficulty_bits: int = MAX_REAL_HASH_BITS
    txs_per_block: int = 2
    attack: AttackParams | None = None
    initial_reward: float = 50.0
    halving_interval: int = 210_000

    def validate(self, nodes: int, path: str = "engine_params") -> None:
        if not 0 <= self.difficulty_bits <= self.max_difficulty_bits:
            raise ConfigError(f"must be in [0, {self.max_difficulty_bits}]", f"{path}.difficulty_bits")
        if not 0 <= self.max_difficulty_bits <= MAX_REAL_HASH_BITS:
            raise ConfigError(f"must be in [0, {MAX_REAL_HASH_BITS}]", f"{path}.max_difficulty_bits")
        if self.hashpower and len(self.hashpower) != nodes:
            raise ConfigError(f"needs one entry per node ({nodes})", f"{path}.hashpower")
        for i, h in enumerate(self.hashpower):
            if h < 0:
                raise ConfigError("must be >= 0", f"{path}.hashpower[{i}]")
        if self.retarget_interval == 1 or self.retarget_interval < 0:
            raise ConfigError("must be 0 (off) or >= 2", f"{path}.retarget_interval")
        if self.target_spacing < 1:
            raise ConfigError("must be >= 1", f"{path}.target_spacing")
        if self.txs_per_block < 0:
            raise ConfigError("must be >= 0", f"{path}.txs_per_block")
        if self.halving_interval < 1:
            raise ConfigError("must be >= 1", f"{path}.halving_interval")
        if self.attack is not None:
            if not 0 <= self.attack.attacker < nodes:
                raise ConfigError("unknown node", f"{path}.attack.attacker")
            if self.attack.give_up < 1:
                raise ConfigError("must be >= 1", f"{path}.attack.give_up")
            if self.attack.start_tick < 0:
                raise ConfigError("must be >= 0", f"{path}.attack.start_tick")

    def hashpower_of(self, node: int) -> int:
        return self.hashpower[node] if self.hashpower else 1


def required_difficulty(parent: Block, lookup: Callable[[bytes], Block], params: PowParams) -> int:
    """Difficulty of the child of ``parent`` under the retarget schedule; ``lookup`` resolves ancestors."""
    if params.retarget_interval == 0:
        return params.difficulty_bits
    if (parent.height + 1) % params.retarget_interval:
        return parent.header.difficulty_bits
    window = [parent.header]
    while len(window) < params.retarget_interval:
        window.append(lookup(window[-1].parent).header)
    window.reverse()
    return min(adjust_difficulty(window, params.target_spacing, params.retarget_interval),
               params.max_difficulty_bits)


class PowNode(ChainNode):
    rules = ValidationRules(require_pow=True)

    def __init__(self, node_id: int, net: Network, genesis: Block, params: PowParams) -> None:
        super().__init__(node_id, net, genesis, params.txs_per_block)
        self.params = params
        self.hashpower = params.hashpower_of(node_id)
        self.mine_rng = net.rng_for(node_id, "mine")
        self.nonce_rng = net.rng_for(node_id, "nonce")
        self._difficulty_cache: dict[bytes, int] = {}
        attack = params.attack
        self.attacking = attack is not None and attack.attacker == node_id and self.byzantine
        self.private: list[Block] = []
        self.fork_base: bytes | None = None
        self.releases = 0
        self.abandoned = 0

    # difficulty schedule ---------------------------------------------------
    def expected_difficulty(self, parent: Block) -> int:
        """Difficulty bits required of the child of ``parent``."""
        if self.params.retarget_interval == 0:
            return self.params.difficulty_bits
        cached = self._difficulty_cache.get(parent.digest)
        if cached is None:
            cached = required_difficulty(parent, self.lookup, self.params)
            self._difficulty_cache[parent.digest] = cached
        return cached

    def lookup(self, digest: bytes) -> Block:
        if digest in self.store:
            return self.store[digest]
        for b in self.private:
            if b.digest == digest:
                return b
        raise KeyError(digest)

    def check_block(self, block: Block, parent: Block) -> BlockFault | None:
        if block.header.difficulty_bits != self.expected_difficulty(parent):
            return BlockFault.DIFFICULTY_MISMATCH
        return None

    # mining ------------------------------------------------------------------
    def mining_tick(self, tick: int) -> Block | None:
        if self.hashpower <= 0:
            return None
        parent = self.mining_parent(tick)
        bits = self.expected_difficulty(parent)
        if self.mine_rng.random() >= tick_success_probability(self.hashpower, bits):
            return None
        block = seal(self.new_block(parent, tick, bits), self.nonce_rng)
        if self.attacking and self.fork_base is not None:
            self.private.append(block)
        else:
            self.accept_own(block)
        return block

    def mining_parent(self, tick: int) -> Block:
        """Honest miners extend the fork-choice tip; an active attacker extends its private branch."""
        if not self.attacking or tick < self.params.attack.start_tick:
            return self.head_block()
        if self.fork_base is None:
            self.fork_base = self.head
        return self.private[-1] if self.private else self.store[self.fork_base]

    def on_tick(self, tick: int) -> None:
        self.mining_tick(tick)
        if self.attacking and self.fork_base is not None:
            self.attack_step()

    def attack_step(self) -> None:
        public = self.store.height(self.head)
        private = self.private[-1].height if self.private else self.store.height(self.fork_base)
        if self.private and private > public:
            for block in self.private:
                self.store.add(block)
                self.broadcast("block", block)
            self.private.clear()
            self.update_head()
            self.fork_base = self.head
            self.releases += 1
        elif public - private >= self.params.attack.give_up:
            self.private.clear()
            self.fork_base = self.head
            self.abandoned += 1


class PowWorld:
    engine = "pow"

    def __init__(self, net: Network, params: PowParams) -> None:
        self.net = net
        self.params = params
        self.genesis = genesis_block(params.difficulty_bits)
        self.nodes = [PowNode(i, net, self.genesis, params) for i in range(net.n)]

    def honest_nodes(self) -> list[ChainNode]:
        return [n for n in self.nodes if not self.net.is_byzantine(n.id)]

    def metrics(self) -> dict:
        observer = self.honest_nodes()[0] if self.honest_nodes() else self.nodes[0]
        chain = observer.store.chain(observer.head)[1:]
        rewards = sum(block_subsidy(b.height, self.params.initial_reward, self.params.halving_interval)
                      for b in chain)
        return {
            "rejected_blocks": sum(sum(n.rejected.values()) for n in self.honest_nodes()),
            "attack_releases": sum(n.releases for n in self.nodes),
            "attack_abandoned": sum(n.abandoned for n in self.nodes),
            "rewards_issued": rewards,
        }


# -- experiments -------------------------------------------------------------

@dataclass(frozen=True)
class MinerConfig:
    node: int
    hashpower: int
    honest: bool = True

    def __post_init__(self) -> None:
        if self.hashpower < 1:
            raise ValueError("hashpower must be >= 1")


def run_race(miners: Sequence[MinerConfig], duration: int, difficulty_bits: int = 8, seed: int = 0,
             latency: LatencyModel = FixedLatency(1)) -> dict[int, int]:
    """Canonical-chain block counts per miner after an all-honest mining race."""
    if not miners:
        raise ValueError("need at least one miner")
    ids = sorted(m.node for m in miners)
    if ids != list(range(len(miners))):
        raise ValueError("miner node ids must be dense 0..n-1")
    hashpower = [0] * len(miners)
    for m in miners:
        hashpower[m.node] = m.hashpower
    params = PowParams(difficulty_bits=difficulty_bits, hashpower=hashpower, txs_per_block=0)
    net = Network(len(miners), seed, latency)
    world = PowWorld(net, params)
    run_loop(net, world.nodes, duration)
    observer = world.nodes[0]
    counts = {m.node: 0 for m in miners}
    for block in observer.store.chain(observer.head)[1:]:
        counts[block.header.proposer] += 1
    return counts


@dataclass(frozen=True)
class AttackSpec:
    """``lag`` counts the blocks the attacker must gain on the honest chain to overtake it."""

    attacker_share: float
    lag: int

    def __post_init__(self) -> None:
        if not 0.0 < self.attacker_share < 1.0:
            raise ConfigError("attacker_share must be in (0, 1)", "attack.attacker_share")
        if self.attacker_share == 0.5:
            raise ConfigError("attacker_share 0.5 is a degenerate random walk", "attack.attacker_share")
        if self.lag < 0:
            raise ConfigError("lag must be >= 0", "attack.lag")


def catch_up_probability(q: float, z: int) -> float:
    """Gambler's-ruin chance that a miner with share q ever closes a z-block gap."""
    p = 1.0 - q
    return 1.0 if q >= p else (q / p) ** z


def double_spend_experiment(spec: AttackSpec, trials: int, seed: int, horizon: int = 10_000,
                            abandon_margin: int = 100) -> float:
    """Fraction of trials in which the private branch overtakes.

    Each trial is a race of block discoveries: the attacker finds the next
    block with probability ``attacker_share``. The trial succeeds as soon as
    the gap reaches zero (so lag 0 succeeds immediately) and fails once the gap
    grows by ``abandon_margin`` or ``horizon`` blocks have been found.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = stream(seed, "double-spend")
    q = spec.attacker_share
    wins = 0
    for _ in range(trials):
        gap = spec.lag
        limit = spec.lag + abandon_margin
        steps = 0
        while 0 < gap < limit and steps < horizon:
            gap += -1 if rng.random() < q else 1
            steps += 1
        wins += gap <= 0
    return wins / trials
